#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coseg/autodiff/tensor.hpp"
#include "coseg/losses.hpp"

namespace coseg::ad {

enum class Mode { Train, Eval };

using NodeId = int;

/// A named tensor owned by a model. Buffers (running statistics) are updated
/// by forward passes but never receive gradients.
template <class T>
struct ParamEntry {
  Tensor<T> value;
  bool trainable = true;
};

template <class T>
using ParamStore = std::map<std::string, ParamEntry<T>>;

template <class T>
ParamStore<T> cast_params(const ParamStore<float>& params) {
  ParamStore<T> out;
  for (const auto& [name, entry] : params) out[name] = {entry.value.template cast<T>(), entry.trainable};
  return out;
}

template <class T>
struct OpContext {
  Mode mode = Mode::Eval;
  ParamStore<T>* params = nullptr;
};

/// One differentiable primitive. Ops may cache forward state for backward;
/// a tape is single-threaded, so that state is never shared.
template <class T>
class Op {
 public:
  virtual ~Op() = default;
  virtual std::string_view name() const = 0;
  virtual void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, OpContext<T>& ctx) = 0;
  /// Accumulates into din[i]; din[i] is null for inputs that need no gradient.
  virtual void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out,
                        const Tensor<T>& dout, std::span<Tensor<T>*> din) = 0;
};

struct BatchNormSettings {
  double momentum = 0.9;  // running = momentum·running + (1 - momentum)·batch
  double epsilon = 1e-5;
  bool operator==(const BatchNormSettings&) const = default;
};

/// Static computation graph recorded once and replayed by forward/backward.
/// Nodes are appended in topological order by construction.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaves. A -1 extent in a declared input shape matches any size.
  NodeId input(const std::string& name, Shape shape, bool requires_grad = false);
  NodeId param(const std::string& name);

  // Primitives.
  NodeId conv2d(NodeId x, NodeId weight, std::optional<NodeId> bias = std::nullopt);
  NodeId deconv2x2(NodeId x, NodeId weight, std::optional<NodeId> bias = std::nullopt);
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, const std::string& running_mean,
                    const std::string& running_var, BatchNormSettings settings = {});
  NodeId relu(NodeId x);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId max_pool2x2(NodeId x);
  NodeId concat_channels(const std::vector<NodeId>& xs);
  NodeId concat_batch(const std::vector<NodeId>& xs);
  /// Part `part` of `parts` equal chunks along the batch axis.
  NodeId slice_batch(NodeId x, int part, int parts);
  /// Keeps the leading (batch) extent and reshapes the rest.
  NodeId reshape_items(NodeId x, Shape item_shape);
  /// Per batch item: a·b, or aᵀ·b when transpose_a.
  NodeId matmul(NodeId a, NodeId b, bool transpose_a = false);
  /// Scales each vector along axis 1 to unit L2 norm.
  NodeId l2_normalize_channels(NodeId x, double epsilon = 1e-8);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  /// Mean over batch items of the per-item loss; pred and target are
  /// [N, 1, H, W].
  NodeId loss(NodeId pred, NodeId target, LossKind kind, LossConfig cfg);

  /// Appends a custom primitive.
  NodeId record(std::unique_ptr<Op<T>> op, std::vector<NodeId> inputs);

  /// Evaluates nodes in order up to and including `until` (default: all).
  /// Inputs recorded after `until` need not be supplied.
  void forward(const std::map<std::string, Tensor<T>>& inputs, ParamStore<T>& params, Mode mode,
               std::optional<NodeId> until = std::nullopt);
  /// Reverse sweep from `output`, which must hold a single value.
  void backward(NodeId output);

  const Tensor<T>& value(NodeId id) const;
  const Tensor<T>& grad(NodeId id) const;
  /// Gradients of every trainable parameter referenced by the graph.
  std::map<std::string, Tensor<T>> param_grads() const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::vector<std::string> param_names() const;

 private:
  enum class Kind { Input, Param, Operation };
  struct Node {
    Kind kind;
    std::string name;
    Shape declared_shape;
    bool requires_grad = false;
    std::unique_ptr<Op<T>> op;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    Tensor<T> grad;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
  std::size_t evaluated_ = 0;  // nodes [0, evaluated_) hold values
  bool forward_done_ = false;
  bool backward_done_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace coseg::ad
