#include "coseg/autodiff/tape.hpp"

#include "coseg/error.hpp"
#include "ops.hpp"

namespace coseg::ad {

template <class T>
NodeId Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  forward_done_ = false;
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <class T>
const typename Tape<T>::Node& Tape<T>::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw Error(ErrorCode::UnknownInput, "no node " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

template <class T>
NodeId Tape<T>::input(const std::string& name, Shape shape, bool requires_grad) {
  for (const auto& n : nodes_) {
    if (n.kind == Kind::Input && n.name == name) {
      throw Error(ErrorCode::InvalidConfig, "duplicate input " + name);
    }
  }
  Node n{Kind::Input, name, std::move(shape), requires_grad, nullptr, {}, {}, {}};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::param(const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
  Node n{Kind::Param, name, {}, true, nullptr, {}, {}, {}};
  const NodeId id = push(std::move(n));
  param_nodes_[name] = id;
  return id;
}

template <class T>
NodeId Tape<T>::record(std::unique_ptr<Op<T>> op, std::vector<NodeId> inputs) {
  bool requires_grad = false;
  for (NodeId i : inputs) requires_grad = requires_grad || node(i).requires_grad;
  Node n{Kind::Operation, std::string(op->name()), {}, requires_grad, std::move(op), std::move(inputs), {}, {}};
  return push(std::move(n));
}

template <class T>
NodeId Tape<T>::conv2d(NodeId x, NodeId weight, std::optional<NodeId> bias) {
  std::vector<NodeId> in{x, weight};
  if (bias) in.push_back(*bias);
  return record(ops::conv2d<T>(bias.has_value()), std::move(in));
}

template <class T>
NodeId Tape<T>::deconv2x2(NodeId x, NodeId weight, std::optional<NodeId> bias) {
  std::vector<NodeId> in{x, weight};
  if (bias) in.push_back(*bias);
  return record(ops::deconv2x2<T>(bias.has_value()), std::move(in));
}

template <class T>
NodeId Tape<T>::batch_norm(NodeId x, NodeId gamma, NodeId beta, const std::string& running_mean,
                           const std::string& running_var, BatchNormSettings settings) {
  return record(ops::batch_norm<T>(running_mean, running_var, settings), {x, gamma, beta});
}

template <class T> NodeId Tape<T>::relu(NodeId x) { return record(ops::relu<T>(), {x}); }
template <class T> NodeId Tape<T>::tanh(NodeId x) { return record(ops::tanh<T>(), {x}); }
template <class T> NodeId Tape<T>::sigmoid(NodeId x) { return record(ops::sigmoid<T>(), {x}); }
template <class T> NodeId Tape<T>::max_pool2x2(NodeId x) { return record(ops::max_pool2x2<T>(), {x}); }

template <class T>
NodeId Tape<T>::concat_channels(const std::vector<NodeId>& xs) {
  return record(ops::concat<T>(1), xs);
}

template <class T>
NodeId Tape<T>::concat_batch(const std::vector<NodeId>& xs) {
  return record(ops::concat<T>(0), xs);
}

template <class T>
NodeId Tape<T>::slice_batch(NodeId x, int part, int parts) {
  return record(ops::slice_batch<T>(part, parts), {x});
}

template <class T>
NodeId Tape<T>::reshape_items(NodeId x, Shape item_shape) {
  return record(ops::reshape_items<T>(std::move(item_shape)), {x});
}

template <class T>
NodeId Tape<T>::matmul(NodeId a, NodeId b, bool transpose_a) {
  return record(ops::matmul<T>(transpose_a), {a, b});
}

template <class T>
NodeId Tape<T>::l2_normalize_channels(NodeId x, double epsilon) {
  return record(ops::l2_normalize<T>(epsilon), {x});
}

template <class T> NodeId Tape<T>::add(NodeId a, NodeId b) { return record(ops::add<T>(), {a, b}); }
template <class T> NodeId Tape<T>::mul(NodeId a, NodeId b) { return record(ops::mul<T>(), {a, b}); }
template <class T> NodeId Tape<T>::sum(NodeId x) { return record(ops::reduce<T>(false), {x}); }
template <class T> NodeId Tape<T>::mean(NodeId x) { return record(ops::reduce<T>(true), {x}); }

template <class T>
NodeId Tape<T>::loss(NodeId pred, NodeId target, LossKind kind, LossConfig cfg) {
  cfg.validate();
  return record(ops::loss<T>(kind, cfg), {pred, target});
}

template <class T>
void Tape<T>::forward(const std::map<std::string, Tensor<T>>& inputs, ParamStore<T>& params, Mode mode,
                      std::optional<NodeId> until) {
  const std::size_t stop = until ? static_cast<std::size_t>(*until) + 1 : nodes_.size();
  if (stop == 0 || stop > nodes_.size()) throw Error(ErrorCode::UnknownInput, "forward target out of range");
  forward_done_ = false;
  evaluated_ = 0;
  backward_done_ = false;
  for (const auto& [name, tensor] : inputs) {
    bool known = false;
    for (const auto& n : nodes_) known = known || (n.kind == Kind::Input && n.name == name);
    if (!known) throw Error(ErrorCode::UnknownInput, "unknown input '" + name + "'");
  }

  OpContext<T> ctx{mode, &params};
  std::vector<const Tensor<T>*> args;
  for (std::size_t idx = 0; idx < stop; ++idx) {
    Node& n = nodes_[idx];
    switch (n.kind) {
      case Kind::Input: {
        auto it = inputs.find(n.name);
        if (it == inputs.end()) throw Error(ErrorCode::UnknownInput, "missing input '" + n.name + "'");
        const Shape& got = it->second.shape();
        bool ok = got.size() == n.declared_shape.size();
        for (std::size_t d = 0; ok && d < got.size(); ++d) {
          ok = n.declared_shape[d] < 0 || n.declared_shape[d] == got[d];
        }
        if (!ok) {
          throw Error(ErrorCode::ShapeMismatch, "input '" + n.name + "' has shape " + shape_str(got) +
                                                    ", declared " + shape_str(n.declared_shape));
        }
        n.value = it->second;
        break;
      }
      case Kind::Param: {
        auto it = params.find(n.name);
        if (it == params.end()) throw Error(ErrorCode::UnknownInput, "missing parameter '" + n.name + "'");
        n.value = it->second.value;
        n.requires_grad = it->second.trainable;
        break;
      }
      case Kind::Operation: {
        args.clear();
        for (NodeId i : n.inputs) args.push_back(&nodes_[static_cast<std::size_t>(i)].value);
        n.op->forward(args, n.value, ctx);
        break;
      }
    }
  }
  evaluated_ = stop;
  forward_done_ = true;
}

template <class T>
void Tape<T>::backward(NodeId output) {
  if (!forward_done_) throw Error(ErrorCode::NoForwardPass, "backward called before forward");
  const Node& out_node = node(output);
  if (static_cast<std::size_t>(output) >= evaluated_) {
    throw Error(ErrorCode::NoForwardPass, "output node was not evaluated by the last forward");
  }
  if (out_node.value.numel() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "backward needs a scalar output, got " +
                                              shape_str(out_node.value.shape()));
  }
  for (std::size_t idx = 0; idx < nodes_.size(); ++idx) {
    Node& n = nodes_[idx];
    if (n.requires_grad && idx < evaluated_) n.grad.reset(n.value.shape());
    else n.grad = Tensor<T>();
  }
  nodes_[static_cast<std::size_t>(output)].grad.fill(T(1));

  std::vector<const Tensor<T>*> args;
  std::vector<Tensor<T>*> dins;
  for (auto idx = static_cast<std::ptrdiff_t>(output); idx >= 0; --idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (n.kind != Kind::Operation || !n.requires_grad) continue;
    args.clear();
    dins.clear();
    for (NodeId i : n.inputs) {
      Node& src = nodes_[static_cast<std::size_t>(i)];
      args.push_back(&src.value);
      dins.push_back(src.requires_grad ? &src.grad : nullptr);
    }
    n.op->backward(args, n.value, n.grad, dins);
  }
  backward_done_ = true;
}

template <class T>
const Tensor<T>& Tape<T>::value(NodeId id) const {
  if (!forward_done_ || static_cast<std::size_t>(id) >= evaluated_) {
    throw Error(ErrorCode::NoForwardPass, "node " + std::to_string(id) + " not evaluated");
  }
  return node(id).value;
}

template <class T>
const Tensor<T>& Tape<T>::grad(NodeId id) const {
  if (!backward_done_) throw Error(ErrorCode::NoForwardPass, "no backward pass yet");
  return node(id).grad;
}

template <class T>
std::map<std::string, Tensor<T>> Tape<T>::param_grads() const {
  if (!backward_done_) throw Error(ErrorCode::NoForwardPass, "no backward pass yet");
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, id] : param_nodes_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.requires_grad && !n.grad.empty()) out[name] = n.grad;
  }
  return out;
}

template <class T>
std::vector<std::string> Tape<T>::param_names() const {
  std::vector<std::string> names;
  for (const auto& [name, id] : param_nodes_) names.push_back(name);
  return names;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace coseg::ad
