#include <doctest.h>

#include <cmath>

#include "coseg/losses.hpp"
#include "helpers.hpp"

using namespace coseg;

namespace {

FloatMap row(std::vector<float> v) {
  const int w = static_cast<int>(v.size());
  return FloatMap(w, 1, std::move(v));
}

// Straightforward evaluation of the weighted, gated 3D IOU ratio; the
// library's kernels are checked against this.
double reference_iou(const std::vector<double>& p, const std::vector<double>& g, double lambda, bool edge,
                     double eps = 1e-8) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double f = p[i] * g[i] > 0 ? 1.0 : lambda;
    const double w = edge ? std::sqrt(std::abs(g[i])) : 1.0;
    if (g[i] > 0) {
      num += f * w * std::min(p[i], g[i]);
      den += f * w * std::max(p[i], g[i]);
    } else {
      num += f * w * std::min(-g[i], -p[i]);
      den += f * w * std::max(-g[i], -p[i]);
    }
  }
  return 1.0 - num / (den + eps);
}

struct Case {
  std::vector<double> p, g;
};

Case random_case(SplitMix64& rng, int n, double wrong_sign_rate = 0.2) {
  Case c;
  for (int i = 0; i < n; ++i) {
    const double mag = rng.uniform(0.1, 1.0);
    const double g = rng.uniform() < 0.5 ? mag : -mag;
    double p = rng.uniform(0.02, 0.98);
    if ((g > 0) == (rng.uniform() < wrong_sign_rate)) p = -p;
    c.p.push_back(p);
    c.g.push_back(g);
  }
  return c;
}

}  // namespace

TEST_CASE("hand-evaluated two-pixel values") {
  const Sndm gt = row({1.0f, -1.0f});
  CHECK(loss_iou3d(row({0.5f, -1.0f}), gt).value == doctest::Approx(0.25).epsilon(1e-7));
  CHECK(loss_iou3d(row({-0.5f, -1.0f}), gt).value == doctest::Approx(0.75).epsilon(1e-7));
  CHECK(loss_iou3d_penalized(row({-0.5f, -1.0f}), gt).value == doctest::Approx(1.25).epsilon(1e-7));
  CHECK(loss_iou3d_edge(row({0.5f, -1.0f}), gt).value == doctest::Approx(0.25).epsilon(1e-7));
  CHECK(loss_iou3d_edge(row({0.1f, -1.0f}), row({0.25f, -1.0f})).value ==
        doctest::Approx(1.0 - 1.05 / 1.125).epsilon(1e-6));
  CHECK(loss_iou3d_edge(row({0.1f, -1.0f}), row({0.25f, -1.0f})).value == doctest::Approx(0.0667).epsilon(1e-3));
}

TEST_CASE("dice values") {
  BinaryMask one(1, 1, true);
  CHECK(loss_dice(row({0.5f}), one).value == doctest::Approx(1.0 - 1.0 / 1.5).epsilon(1e-7));
  CHECK(loss_dice(row({0.5f}), one).value == doctest::Approx(0.3333).epsilon(1e-3));
  const BinaryMask m = testutil::mask_from(4, 1, ".##.");
  CHECK(std::abs(loss_dice(row({0, 1, 1, 0}), m).value) < 1e-6);
  CHECK(loss_dice(row({0, 0, 0, 0}), m).value == doctest::Approx(1.0));
}

TEST_CASE("penalty_factor") {
  LossConfig cfg;
  CHECK(penalty_factor(0.5, 1.0, cfg) == 1.0);
  CHECK(penalty_factor(-0.5, 1.0, cfg) == 5.0);
  CHECK(penalty_factor(0.0, 1.0, cfg) == 5.0);
  CHECK(penalty_factor(-0.3, -0.7, cfg) == 1.0);
}

TEST_CASE("shape mismatch is rejected") {
  CHECK_THROWS_CODE(loss_iou3d(row({0.1f, 0.2f}), row({1.0f})), ErrorCode::ShapeMismatch);
  CHECK_THROWS_CODE(loss_dice(row({0.1f, 0.2f}), BinaryMask(3, 1)), ErrorCode::ShapeMismatch);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  c.lambda = 0.5;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  c = {};
  c.epsilon = 1e-3;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  c.epsilon = 0.0;
  CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
}

TEST_CASE("kernels agree with the reference formula") {
  SplitMix64 rng(101);
  LossConfig cfg;
  for (int t = 0; t < 200; ++t) {
    const Case c = random_case(rng, static_cast<int>(rng.uniform_int(1, 60)));
    CHECK(iou3d_loss(c.p, c.g, cfg).value == doctest::Approx(reference_iou(c.p, c.g, 1.0, false)).epsilon(1e-12));
    CHECK(iou3d_penalized_loss(c.p, c.g, cfg).value ==
          doctest::Approx(reference_iou(c.p, c.g, 5.0, false)).epsilon(1e-12));
    CHECK(iou3d_edge_loss(c.p, c.g, cfg).value ==
          doctest::Approx(reference_iou(c.p, c.g, 5.0, true)).epsilon(1e-12));
  }
}

TEST_CASE("identity: every loss is zero at pred = gt") {
  SplitMix64 rng(103);
  LossConfig cfg;
  for (int t = 0; t < 100; ++t) {
    const Case c = random_case(rng, 50);
    for (LossKind k : {LossKind::Iou3d, LossKind::Iou3dPenalized, LossKind::Iou3dEdge})
      CHECK(std::abs(evaluate_loss(k, c.g, c.g, cfg).value) < 1e-6);
    std::vector<double> ind;
    for (double g : c.g) ind.push_back(g > 0 ? 1.0 : 0.0);
    if (std::count(ind.begin(), ind.end(), 1.0) > 0) CHECK(std::abs(dice_loss(ind, ind, cfg).value) < 1e-6);
  }
}

TEST_CASE("lambda = 1 reduces the penalized loss to plain 3D IOU exactly") {
  SplitMix64 rng(107);
  LossConfig one;
  one.lambda = 1.0;
  for (int t = 0; t < 100; ++t) {
    const Case c = random_case(rng, 40, 0.4);
    const LossValue a = iou3d_loss(c.p, c.g, one);
    const LossValue b = iou3d_penalized_loss(c.p, c.g, one);
    CHECK(a.value == b.value);
    CHECK(a.grad == b.grad);

    std::vector<double> unit = c.g;
    for (double& g : unit) g = g > 0 ? 1.0 : -1.0;
    const LossValue e = iou3d_edge_loss(c.p, unit, one);
    const LossValue f = iou3d_loss(c.p, unit, one);
    CHECK(e.value == f.value);
    CHECK(e.grad == f.grad);
  }
}

TEST_CASE("flipping a correctly signed pixel strictly increases the gated losses") {
  // Holds while the overlap numerator is nonnegative (loss <= 1). Past that
  // point the larger denominator shrinks the negative ratio instead.
  SplitMix64 rng(109);
  LossConfig cfg;
  int checked = 0;
  for (int t = 0; t < 400; ++t) {
    Case c = random_case(rng, 20, 0.1);
    std::size_t i = 0;
    while (i < c.p.size() && c.p[i] * c.g[i] <= 0) ++i;
    if (i == c.p.size()) continue;
    const double before_pen = iou3d_penalized_loss(c.p, c.g, cfg).value;
    const double before_edge = iou3d_edge_loss(c.p, c.g, cfg).value;
    c.p[i] = -c.p[i];
    if (before_pen <= 1.0) CHECK(iou3d_penalized_loss(c.p, c.g, cfg).value > before_pen);
    if (before_edge <= 1.0) CHECK(iou3d_edge_loss(c.p, c.g, cfg).value > before_edge);
    checked += before_pen <= 1.0;
  }
  CHECK(checked > 200);
}

TEST_CASE("flip monotonicity fails once the numerator is negative") {
  const std::vector<double> g{1.0, 1.0, -1.0};
  std::vector<double> p{-0.9, 0.05, -0.5};
  const double before = iou3d_penalized_loss(p, g, LossConfig{}).value;
  REQUIRE(before > 1.0);
  p[1] = -0.05;
  CHECK(iou3d_penalized_loss(p, g, LossConfig{}).value < before);
}

TEST_CASE("loss is increasing in lambda iff a sign error is present") {
  SplitMix64 rng(113);
  for (int t = 0; t < 100; ++t) {
    const Case with_errors = random_case(rng, 20, 0.3);
    const Case clean = random_case(rng, 20, 0.0);
    const bool has_error = std::any_of(with_errors.p.begin(), with_errors.p.end(), [&, i = 0](double) mutable {
      const bool wrong = with_errors.p[static_cast<std::size_t>(i)] * with_errors.g[static_cast<std::size_t>(i)] <= 0;
      ++i;
      return wrong;
    });
    double prev_err = -INFINITY;
    const double base_clean = iou3d_edge_loss(clean.p, clean.g, LossConfig{}).value;
    for (double lambda : {1.0, 2.0, 5.0, 10.0}) {
      LossConfig cfg;
      cfg.lambda = lambda;
      const double v = iou3d_edge_loss(with_errors.p, with_errors.g, cfg).value;
      if (has_error) CHECK(v > prev_err);
      prev_err = v;
      CHECK(iou3d_edge_loss(clean.p, clean.g, cfg).value == base_clean);
      CHECK(iou3d_penalized_loss(clean.p, clean.g, cfg).value == iou3d_loss(clean.p, clean.g, cfg).value);
    }
  }
}

TEST_CASE("values are finite and may exceed one") {
  const std::vector<double> p{-0.9, 0.9}, g{0.9, -0.9};
  const double v = iou3d_penalized_loss(p, g, LossConfig{}).value;
  CHECK(std::isfinite(v));
  CHECK(v > 1.0);
}

TEST_CASE("analytic gradients match central differences computed here") {
  SplitMix64 rng(127);
  LossConfig cfg;
  const double h = 1e-6;
  for (LossKind k : {LossKind::Dice, LossKind::Iou3d, LossKind::Iou3dPenalized, LossKind::Iou3dEdge}) {
    double worst = 0.0;
    for (int t = 0; t < 30; ++t) {
      Case c = random_case(rng, 12);
      if (k == LossKind::Dice) {
        for (double& g : c.g) g = g > 0 ? 1.0 : 0.0;
        for (double& p : c.p) p = std::abs(p);
      }
      bool near_kink = false;
      for (std::size_t i = 0; i < c.p.size(); ++i)
        near_kink = near_kink || std::abs(c.p[i] - c.g[i]) < 1e-2 || std::abs(c.p[i] + c.g[i]) < 1e-2;
      if (near_kink) continue;
      const LossValue lv = evaluate_loss(k, c.p, c.g, cfg);
      for (std::size_t i = 0; i < c.p.size(); ++i) {
        auto q = c.p;
        q[i] += h;
        const double up = evaluate_loss(k, q, c.g, cfg).value;
        q[i] -= 2 * h;
        const double dn = evaluate_loss(k, q, c.g, cfg).value;
        const double fd = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(fd - lv.grad[i]) / std::max({std::abs(fd), std::abs(lv.grad[i]), 1e-6}));
      }
    }
    CHECK_MESSAGE(worst < 1e-5, loss_kind_name(k) << " " << worst);
  }
}

TEST_CASE("grad_check_loss stays under 1e-5 for 100 trials") {
  for (LossKind k : {LossKind::Dice, LossKind::Iou3d, LossKind::Iou3dPenalized, LossKind::Iou3dEdge}) {
    const double e = grad_check_loss(k, 100, 17);
    CHECK_MESSAGE(e < 1e-5, loss_kind_name(k) << " " << e);
  }
}

TEST_CASE("raster wrappers carry the gradient in the prediction's shape") {
  const Sndm gt = sndm_encode(testutil::mask_from(3, 2, ".##.#."));
  const FloatMap pred(3, 2, 0.3f);
  const LossReport r = loss_iou3d_edge(pred, gt);
  CHECK(r.grad.width() == 3);
  CHECK(r.grad.height() == 2);
  CHECK(std::isfinite(r.value));
}

TEST_CASE("pairwise summation is order-fixed and accurate") {
  std::vector<double> v(1000, 0.1);
  CHECK(pairwise_sum(v) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(pairwise_sum(std::vector<double>{}) == 0.0);
}

TEST_CASE("loss names parse") {
  CHECK(parse_loss_kind("iou3d-edge") == LossKind::Iou3dEdge);
  CHECK(parse_loss_kind("iou3d-pen") == LossKind::Iou3dPenalized);
  CHECK(loss_kind_name(LossKind::Dice) == "dice");
  CHECK_THROWS_CODE(parse_loss_kind("l2"), ErrorCode::InvalidConfig);
}
