#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "coseg/grid.hpp"
#include "coseg/sndm_codec.hpp"

namespace coseg {

enum class LossKind { Dice, Iou3d, Iou3dPenalized, Iou3dEdge };

std::string_view loss_kind_name(LossKind kind);
/// Accepts the CLI spellings: dice, iou3d, iou3d-pen, iou3d-edge.
LossKind parse_loss_kind(std::string_view name);

struct LossConfig {
  double lambda = 5.0;    // sign-error penalty
  double epsilon = 1e-8;  // denominator guard

  /// lambda >= 1, epsilon in (0, 1e-4]; throws InvalidConfig.
  void validate() const;
};

struct LossReport {
  double value;
  FloatMap grad;  // dL/dprediction, same shape as the prediction
};

/// Scalar loss and its gradient in 64-bit, over flat pixel arrays.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad;
};

/// Deterministic fixed-tree (pairwise) summation.
double pairwise_sum(std::span<const double> terms);

/// Penalty gate: 1 when prediction and label agree in sign, lambda otherwise.
double penalty_factor(double pred_value, double gt_value, const LossConfig& cfg);

// Core kernels. `target` is a 0/1 indicator for Dice and an SNDM otherwise;
// the foreground/background split follows the sign of the target.
LossValue dice_loss(std::span<const double> pred, std::span<const double> target,
                    const LossConfig& cfg);
LossValue iou3d_loss(std::span<const double> pred, std::span<const double> target,
                     const LossConfig& cfg);
LossValue iou3d_penalized_loss(std::span<const double> pred, std::span<const double> target,
                               const LossConfig& cfg);
LossValue iou3d_edge_loss(std::span<const double> pred, std::span<const double> target,
                          const LossConfig& cfg);
LossValue evaluate_loss(LossKind kind, std::span<const double> pred,
                        std::span<const double> target, const LossConfig& cfg);

// Raster wrappers. Throw ShapeMismatch when shapes differ.
LossReport loss_dice(const FloatMap& pred_prob, const BinaryMask& gt, const LossConfig& cfg = {});
LossReport loss_iou3d(const FloatMap& pred, const Sndm& gt, const LossConfig& cfg = {});
LossReport loss_iou3d_penalized(const FloatMap& pred, const Sndm& gt, const LossConfig& cfg = {});
LossReport loss_iou3d_edge(const FloatMap& pred, const Sndm& gt, const LossConfig& cfg = {});

/// Compares analytic gradients against central differences (h = 1e-4, 64-bit)
/// at random points kept at least 1e-2 away from every kink (|p - g| and |p|).
/// Returns the maximum relative error over all trials and pixels.
double grad_check_loss(LossKind kind, int trials, std::uint64_t seed, const LossConfig& cfg = {});

}  // namespace coseg
