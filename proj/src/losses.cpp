#include "coseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coseg/error.hpp"
#include "coseg/rng.hpp"

namespace coseg {

std::string_view loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Dice: return "dice";
    case LossKind::Iou3d: return "iou3d";
    case LossKind::Iou3dPenalized: return "iou3d-pen";
    case LossKind::Iou3dEdge: return "iou3d-edge";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  for (auto kind : {LossKind::Dice, LossKind::Iou3d, LossKind::Iou3dPenalized, LossKind::Iou3dEdge}) {
    if (loss_kind_name(kind) == name) return kind;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown loss '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(lambda >= 1.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::InvalidConfig, "lambda must be >= 1");
  }
  if (!(epsilon > 0.0 && epsilon <= 1e-4)) {
    throw Error(ErrorCode::InvalidConfig, "epsilon must lie in (0, 1e-4]");
  }
}

double pairwise_sum(std::span<const double> terms) {
  if (terms.size() <= 8) {
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
  }
  const std::size_t half = terms.size() / 2;
  return pairwise_sum(terms.first(half)) + pairwise_sum(terms.subspan(half));
}

double penalty_factor(double pred_value, double gt_value, const LossConfig& cfg) {
  return pred_value * gt_value > 0.0 ? 1.0 : cfg.lambda;
}

namespace {

void check_same_size(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "prediction has " + std::to_string(pred.size()) +
                                              " values, target " + std::to_string(target.size()));
  }
}

struct IouOptions {
  bool penalize = false;
  bool edge_weights = false;
};

// L = 1 - Num / (Den + eps). Foreground pixels (target > 0) contribute
// c·min(p, g) and c·max(p, g); background pixels c·min(-u, -v) and
// c·max(-u, -v). The per-pixel constant c = F·w carries no gradient.
LossValue iou3d_family(std::span<const double> pred, std::span<const double> target,
                       const LossConfig& cfg, IouOptions opts) {
  check_same_size(pred, target);
  const std::size_t n = pred.size();
  std::vector<double> num_terms(n);
  std::vector<double> den_terms(n);
  // Per-pixel partials of num and den with respect to the prediction.
  std::vector<double> dnum(n);
  std::vector<double> dden(n);

  for (std::size_t k = 0; k < n; ++k) {
    const double x = pred[k];
    const double t = target[k];
    double c = opts.penalize ? penalty_factor(x, t, cfg) : 1.0;
    if (t > 0.0) {
      if (opts.edge_weights) c *= std::sqrt(t);
      // Ties send both the min- and max-derivative to the first argument (x).
      num_terms[k] = c * std::min(x, t);
      den_terms[k] = c * std::max(x, t);
      dnum[k] = x <= t ? c : 0.0;
      dden[k] = x >= t ? c : 0.0;
    } else {
      if (opts.edge_weights) c *= std::sqrt(-t);
      const double a = -t;  // first argument
      const double b = -x;
      num_terms[k] = c * std::min(a, b);
      den_terms[k] = c * std::max(a, b);
      dnum[k] = b < a ? -c : 0.0;
      dden[k] = b > a ? -c : 0.0;
    }
  }

  const double num = pairwise_sum(num_terms);
  const double den = pairwise_sum(den_terms) + cfg.epsilon;
  LossValue out;
  out.value = 1.0 - num / den;
  out.grad.resize(n);
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t k = 0; k < n; ++k) {
    out.grad[k] = (num * dden[k] - den * dnum[k]) * inv_den2;
  }
  return out;
}

LossReport to_report(const LossValue& v, int width, int height) {
  std::vector<float> grad(v.grad.size());
  std::transform(v.grad.begin(), v.grad.end(), grad.begin(),
                 [](double g) { return static_cast<float>(g); });
  return LossReport{v.value, FloatMap(width, height, std::move(grad))};
}

std::vector<double> widen(std::span<const float> values) {
  return std::vector<double>(values.begin(), values.end());
}

void check_shapes(const FloatMap& pred, int width, int height) {
  if (pred.width() != width || pred.height() != height) {
    throw Error(ErrorCode::ShapeMismatch,
                "prediction " + std::to_string(pred.width()) + "x" + std::to_string(pred.height()) +
                    " vs target " + std::to_string(width) + "x" + std::to_string(height));
  }
}

LossReport raster_iou(LossKind kind, const FloatMap& pred, const Sndm& gt, const LossConfig& cfg) {
  check_shapes(pred, gt.width(), gt.height());
  const auto p = widen(pred.values());
  const auto g = widen(gt.values());
  return to_report(evaluate_loss(kind, p, g, cfg), pred.width(), pred.height());
}

}  // namespace

LossValue dice_loss(std::span<const double> pred, std::span<const double> target,
                    const LossConfig& cfg) {
  check_same_size(pred, target);
  const std::size_t n = pred.size();
  std::vector<double> overlap(n);
  for (std::size_t k = 0; k < n; ++k) overlap[k] = pred[k] * target[k];
  const double inter = pairwise_sum(overlap);
  const double den = pairwise_sum(pred) + pairwise_sum(target) + cfg.epsilon;
  LossValue out;
  out.value = 1.0 - 2.0 * inter / den;
  out.grad.resize(n);
  const double inv_den2 = 1.0 / (den * den);
  for (std::size_t k = 0; k < n; ++k) {
    out.grad[k] = -2.0 * (target[k] * den - inter) * inv_den2;
  }
  return out;
}

LossValue iou3d_loss(std::span<const double> pred, std::span<const double> target,
                     const LossConfig& cfg) {
  return iou3d_family(pred, target, cfg, {});
}

LossValue iou3d_penalized_loss(std::span<const double> pred, std::span<const double> target,
                               const LossConfig& cfg) {
  return iou3d_family(pred, target, cfg, {.penalize = true});
}

LossValue iou3d_edge_loss(std::span<const double> pred, std::span<const double> target,
                          const LossConfig& cfg) {
  return iou3d_family(pred, target, cfg, {.penalize = true, .edge_weights = true});
}

LossValue evaluate_loss(LossKind kind, std::span<const double> pred,
                        std::span<const double> target, const LossConfig& cfg) {
  switch (kind) {
    case LossKind::Dice: return dice_loss(pred, target, cfg);
    case LossKind::Iou3d: return iou3d_loss(pred, target, cfg);
    case LossKind::Iou3dPenalized: return iou3d_penalized_loss(pred, target, cfg);
    case LossKind::Iou3dEdge: return iou3d_edge_loss(pred, target, cfg);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown loss kind");
}

LossReport loss_dice(const FloatMap& pred_prob, const BinaryMask& gt, const LossConfig& cfg) {
  check_shapes(pred_prob, gt.width(), gt.height());
  const auto p = widen(pred_prob.values());
  std::vector<double> g(gt.labels().begin(), gt.labels().end());
  return to_report(dice_loss(p, g, cfg), gt.width(), gt.height());
}

LossReport loss_iou3d(const FloatMap& pred, const Sndm& gt, const LossConfig& cfg) {
  return raster_iou(LossKind::Iou3d, pred, gt, cfg);
}

LossReport loss_iou3d_penalized(const FloatMap& pred, const Sndm& gt, const LossConfig& cfg) {
  return raster_iou(LossKind::Iou3dPenalized, pred, gt, cfg);
}

LossReport loss_iou3d_edge(const FloatMap& pred, const Sndm& gt, const LossConfig& cfg) {
  return raster_iou(LossKind::Iou3dEdge, pred, gt, cfg);
}

double grad_check_loss(LossKind kind, int trials, std::uint64_t seed, const LossConfig& cfg) {
  constexpr double kStep = 1e-4;
  constexpr double kKinkMargin = 1e-2;
  SplitMix64 rng(seed);
  double worst = 0.0;

  for (int trial = 0; trial < trials; ++trial) {
    const int w = static_cast<int>(rng.uniform_int(2, 8));
    const int h = static_cast<int>(rng.uniform_int(2, 8));
    BinaryMask mask(w, h);
    do {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mask.set(x, y, rng.uniform() < 0.5);
    } while (mask.count_foreground() == 0 || mask.count_foreground() == mask.size());

    std::vector<double> target;
    std::vector<double> pred(mask.size());
    if (kind == LossKind::Dice) {
      target.assign(mask.labels().begin(), mask.labels().end());
      for (auto& p : pred) p = rng.uniform(kKinkMargin, 1.0 - kKinkMargin);
    } else {
      const auto sndm = sndm_encode(mask);
      target.assign(sndm.values().begin(), sndm.values().end());
      for (std::size_t k = 0; k < pred.size(); ++k) {
        double p;
        do {
          p = rng.uniform(-1.0, 1.0);
        } while (std::abs(p - target[k]) <= kKinkMargin || std::abs(p) <= kKinkMargin);
        pred[k] = p;
      }
    }

    const LossValue analytic = evaluate_loss(kind, pred, target, cfg);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      auto probe = pred;
      probe[k] = pred[k] + kStep;
      const double up = evaluate_loss(kind, probe, target, cfg).value;
      probe[k] = pred[k] - kStep;
      const double down = evaluate_loss(kind, probe, target, cfg).value;
      const double numeric = (up - down) / (2.0 * kStep);
      const double scale = std::max({std::abs(numeric), std::abs(analytic.grad[k]), 1e-12});
      worst = std::max(worst, std::abs(numeric - analytic.grad[k]) / scale);
    }
  }
  return worst;
}

}  // namespace coseg
