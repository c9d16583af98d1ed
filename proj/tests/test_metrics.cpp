#include <doctest.h>

#include <json.hpp>

#include "coseg/metrics.hpp"
#include "helpers.hpp"

using namespace coseg;
using testutil::mask_from;

TEST_CASE("hand-counted fixtures") {
  const BinaryMask seg = mask_from(3, 2, "####..");
  const BinaryMask gt = mask_from(3, 2, "###...");
  CHECK(precision(seg, gt) == 0.75);
  CHECK(jaccard(seg, gt) == 0.75);
  CHECK(pixel_accuracy(mask_from(2, 2, "#..."), mask_from(2, 2, "##..")) == 0.75);
}

TEST_CASE("trivial cases and empty-set conventions") {
  const BinaryMask a = mask_from(3, 1, "#..");
  const BinaryMask b = mask_from(3, 1, "..#");
  const BinaryMask empty(3, 1);
  CHECK(precision(a, a) == 1.0);
  CHECK(jaccard(a, a) == 1.0);
  CHECK(precision(a, b) == 0.0);
  CHECK(jaccard(a, b) == 0.0);
  CHECK(pixel_accuracy(a, a.complement()) == 0.0);
  CHECK(precision(empty, empty) == 1.0);
  CHECK(precision(empty, a) == 0.0);
  CHECK(jaccard(empty, empty) == 1.0);
  CHECK_THROWS_CODE(precision(a, BinaryMask(2, 1)), ErrorCode::ShapeMismatch);
  CHECK_THROWS_CODE(jaccard(a, BinaryMask(3, 2)), ErrorCode::ShapeMismatch);
  CHECK_THROWS_CODE(pixel_accuracy(a, BinaryMask(1, 1)), ErrorCode::ShapeMismatch);
}

TEST_CASE("metric invariants on random pairs") {
  SplitMix64 rng(211);
  for (int t = 0; t < 1000; ++t) {
    const int w = static_cast<int>(rng.uniform_int(1, 12)), h = static_cast<int>(rng.uniform_int(1, 12));
    const BinaryMask a = testutil::random_mask(w, h, rng, rng.uniform());
    const BinaryMask b = testutil::random_mask(w, h, rng, rng.uniform());
    CHECK(jaccard(a, b) == jaccard(b, a));
    CHECK(jaccard(a, b) <= std::min(precision(a, b), precision(b, a)));
    CHECK(pixel_accuracy(a, b) == pixel_accuracy(a.complement(), b.complement()));
    for (double v : {precision(a, b), jaccard(a, b), pixel_accuracy(a, b)}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    if (testutil::two_class(b)) {
      const bool all_one = precision(a, b) == 1.0 && jaccard(a, b) == 1.0 && pixel_accuracy(a, b) == 1.0;
      CHECK(all_one == (a == b));
    }
  }
}

TEST_CASE("report mean and JSON layout") {
  MetricsReport r;
  r.items.push_back({"x/a", score(mask_from(2, 1, "#."), mask_from(2, 1, "#."))});
  r.items.push_back({"x/b", score(mask_from(2, 1, "##"), mask_from(2, 1, "#."))});
  r.finalize();
  CHECK(r.mean.jaccard == 0.75);
  CHECK(r.mean.precision == 0.75);
  CHECK(r.mean.pixel_accuracy == 0.75);
  const auto j = nlohmann::json::parse(r.to_json());
  REQUIRE(j["items"].size() == 2);
  CHECK(j["items"][1]["id"] == "x/b");
  CHECK(j["items"][1]["jaccard"].get<double>() == 0.5);
  CHECK(j["mean"]["pixel_accuracy"].get<double>() == 0.75);
}
