#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coseg/autodiff/tape.hpp"
#include "coseg/grid.hpp"
#include "coseg/losses.hpp"

namespace coseg {

enum class OutputHead { SndmTanh, MaskSigmoid };

std::string_view head_name(OutputHead head);  // "sndm" | "mask"
OutputHead parse_head(std::string_view name);

/// Toy dense Siamese U-Net layout.
///
/// Encoder level l (0-based) runs two 3x3 conv+BN+ReLU blocks at
/// input_size / 2^l, with a 2x2 max-pool between levels. The correlation
/// block compares the deepest features of the two branches. Decoder module k
/// (1-based, k < levels) runs two 3x3 conv+BN+ReLU blocks at the resolution
/// of encoder level `levels - k`; module 1 also receives the correlation map.
/// The last module concatenates the input image and ends in the output conv
/// + Tanh/Sigmoid head.
struct NetConfig {
  int input_size = 64;
  std::vector<int> widths = {16, 32, 64};
  int levels = 3;
  bool dense_connections = true;
  OutputHead head = OutputHead::SndmTanh;
  int adapter_channels = 16;
  ad::BatchNormSettings batch_norm;

  /// Throws InvalidConfig.
  void validate() const;

  int level_size(int level) const { return input_size >> level; }
  /// Channels of the correlation map (one per deepest-level position).
  int correlation_channels() const;
  /// Output channels of decoder module k (1-based).
  int decoder_width(int module) const;

  /// key=value lines, stored in checkpoint headers.
  std::string to_text() const;
  static NetConfig from_text(const std::string& text);

  bool operator==(const NetConfig&) const = default;
};

using NetParams = ad::ParamStore<float>;

struct ParamSpec {
  std::string name;
  ad::Shape shape;
  enum class Role { ConvWeight, DeconvWeight, Bias, BnScale, BnShift, RunningMean, RunningVar } role;
  int fan_in = 0;
};

/// Every parameter and buffer of the network, in construction order.
std::vector<ParamSpec> param_specs(const NetConfig& config);

/// He-normal conv kernels (std sqrt(2 / fan_in)); the output conv uses
/// std sqrt(1 / fan_in). BN scale 1, shift 0, running mean 0, running var 1.
/// Each tensor draws from its own SplitMix64 stream keyed by (seed, name).
NetParams init_params(const NetConfig& config, std::uint64_t seed);

std::size_t trainable_parameter_count(const NetParams& params);

/// Correlation block recorded on a tape. Features are [N, C, H, W]; each
/// result is [N, H*W, H, W] where channel j at position i is the cosine
/// similarity of A's vector at i and B's vector at j (roles swapped for B).
template <class T>
std::pair<ad::NodeId, ad::NodeId> correlation_nodes(ad::Tape<T>& tape, ad::NodeId feat_a, ad::NodeId feat_b,
                                                    int channels, int height, int width);

/// Standalone correlation of two [C, H, W] maps. Throws ShapeMismatch.
std::pair<ad::Tensor<double>, ad::Tensor<double>> correlation(const ad::Tensor<double>& feat_a,
                                                              const ad::Tensor<double>& feat_b);

/// Per-branch network output, [N, 1, S, S].
template <class T>
struct PairOutput {
  ad::Tensor<T> pred_a;
  ad::Tensor<T> pred_b;
};

/// The network graph recorded on a tape. Both branches are stacked along the
/// batch axis ([A; B]) so they pass through one set of shared parameters.
template <class T>
class CosegNet {
 public:
  CosegNet(const NetConfig& config, LossKind loss, LossConfig loss_config = {});

  const NetConfig& config() const noexcept { return config_; }

  /// Images are [N, 3, S, S]. Train mode requires N >= 2 (BatchTooSmall).
  PairOutput<T> forward_pair(const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b,
                             ad::ParamStore<T>& params, ad::Mode mode);

  /// Forward through the loss; targets are [N, 1, S, S] (SNDM values for the
  /// tanh head, 0/1 masks for the sigmoid head). Returns the batch loss.
  double forward_loss(const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b,
                      const ad::Tensor<T>& target_a, const ad::Tensor<T>& target_b,
                      ad::ParamStore<T>& params, ad::Mode mode);

  /// forward_loss followed by a backward pass; returns trainable-parameter
  /// gradients.
  std::map<std::string, ad::Tensor<T>> loss_and_grads(const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b,
                                                      const ad::Tensor<T>& target_a,
                                                      const ad::Tensor<T>& target_b,
                                                      ad::ParamStore<T>& params, ad::Mode mode,
                                                      double* loss_value = nullptr);

  /// Input shape of decoder module k (1-based) in the last forward pass.
  const ad::Shape& decoder_input_shape(int module) const;

  ad::Tape<T>& tape() noexcept { return tape_; }

 private:
  std::map<std::string, ad::Tensor<T>> feeds(const ad::Tensor<T>& img_a, const ad::Tensor<T>& img_b,
                                             ad::Mode mode) const;

  NetConfig config_;
  ad::Tape<T> tape_;
  ad::NodeId pred_a_ = -1;
  ad::NodeId pred_b_ = -1;
  ad::NodeId loss_ = -1;
  std::vector<ad::NodeId> decoder_inputs_;
};

extern template class CosegNet<float>;
extern template class CosegNet<double>;

/// Central-difference check of d(loss)/d(parameter) for `samples` randomly
/// chosen trainable scalars of a 64-bit network in train mode (batch 2,
/// random images and masks). Relative error is |a - n| / max(|a|, |n|, 1e-6).
/// Each scalar is differenced with steps 1e-6 and 1e-7 and the smaller error
/// counts: a step that crosses a ReLU or max-pool kink disagrees at one step
/// size only, while a wrong gradient disagrees at both.
double grad_check_net(const NetConfig& config, LossKind loss, int samples, std::uint64_t seed,
                      LossConfig loss_config = {});

// Checkpoints: "CKPT", u32 version, u32 header length, NetConfig text, u32
// tensor count, then per tensor u32 name length, name, u32 rank, u32 extents,
// little-endian float32 values.
void save_checkpoint(const std::filesystem::path& path, const NetConfig& config, const NetParams& params);
std::pair<NetConfig, NetParams> load_checkpoint(const std::filesystem::path& path);

/// RgbImage (interleaved) to a planar [3, H, W] slice of a batch tensor.
void copy_image_to_tensor(const RgbImage& image, ad::Tensor<float>& batch, int index);

}  // namespace coseg
