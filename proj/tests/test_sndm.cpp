#include <doctest.h>

#include <cmath>

#include "coseg/distance_transform.hpp"
#include "coseg/sndm_codec.hpp"
#include "helpers.hpp"

using namespace coseg;

TEST_CASE("row fixtures") {
  // D = [2,1,0,1,0,1,2] on the middle row of a thick band.
  const BinaryMask band = testutil::mask_from(7, 3, "..###....###....###..");
  const Sndm s = sndm_encode(band);
  const std::vector<float> expected{-0.1f, -1.0f, 1.0f, 0.1f, 1.0f, -1.0f, -0.1f};
  for (int x = 0; x < 7; ++x) CHECK(s.at(x, 1) == doctest::Approx(expected[static_cast<std::size_t>(x)]));
  CHECK(sndm_decode(s) == band);

  const BinaryMask row = testutil::mask_from(7, 1, "..###..");
  const Sndm r = sndm_encode(row);
  for (int x = 0; x < 7; ++x) CHECK(r.at(x, 0) == expected[static_cast<std::size_t>(x)]);
  CHECK(sndm_decode(r) == row);
}

TEST_CASE("single foreground pixel gets 1.0") {
  const Sndm s = sndm_encode(testutil::mask_from(3, 3, "....#...."));
  CHECK(s.at(1, 1) == 1.0f);
  CHECK(s.at(0, 1) == -1.0f);
  CHECK(s.at(0, 0) == -0.1f);
}

TEST_CASE("degenerate masks are rejected") {
  CHECK_THROWS_CODE(sndm_encode(BinaryMask(4, 4, true)), ErrorCode::DegenerateMask);
  CHECK_THROWS_CODE(sndm_encode(BinaryMask(4, 4, false)), ErrorCode::DegenerateMask);
}

TEST_CASE("constant negative map decodes to background") {
  CHECK(sndm_decode(FloatMap(5, 3, -0.5f)).count_foreground() == 0);
}

TEST_CASE("range, boundary attainment and round trip on random masks") {
  SplitMix64 rng(31);
  int done = 0;
  while (done < 500) {
    const BinaryMask m = testutil::random_mask(32, 32, rng, rng.uniform(0.05, 0.95));
    if (!testutil::two_class(m)) continue;
    ++done;
    const Sndm s = sndm_encode(m);
    bool has_bg_one = false;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const float v = s.at(x, y);
        if (m.at(x, y)) {
          CHECK(v >= 0.1f);
          CHECK(v <= 1.0f);
        } else {
          CHECK(v <= -0.1f);
          CHECK(v >= -1.0f);
          has_bg_one = has_bg_one || v == -1.0f;
        }
      }
    CHECK(has_bg_one);
    for (const Pixel& p : boundary_set(m)) CHECK(s.at(p.x, p.y) == 1.0f);
    CHECK(sndm_decode(s) == m);
  }
}

TEST_CASE("encoding is affine in distance within each region") {
  SplitMix64 rng(37);
  for (int t = 0; t < 50; ++t) {
    const BinaryMask m = testutil::random_mask(20, 20, rng, 0.5);
    if (!testutil::two_class(m)) continue;
    const DistanceMap d = edt(m);
    const Sndm s = sndm_encode(m);
    for (int fg = 0; fg < 2; ++fg) {
      double lo = INFINITY, hi = -INFINITY;
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x)
          if (m.at(x, y) == (fg == 1)) {
            lo = std::min(lo, d.at(x, y));
            hi = std::max(hi, d.at(x, y));
          }
      const double sign = fg ? 1.0 : -1.0;
      for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
          if (m.at(x, y) != (fg == 1)) continue;
          const double expected = hi > lo ? sign * (1.0 - 0.9 * (d.at(x, y) - lo) / (hi - lo)) : sign;
          CHECK(s.at(x, y) == doctest::Approx(expected).epsilon(1e-6));
        }
    }
  }
}

TEST_CASE("encoding commutes with mirroring") {
  SplitMix64 rng(41);
  for (int t = 0; t < 50; ++t) {
    const BinaryMask m = testutil::random_mask(13, 8, rng, 0.5);
    if (!testutil::two_class(m)) continue;
    CHECK(sndm_encode(m.mirrored_x()) == sndm_encode(m).mirrored_x());
    CHECK(sndm_encode(m.mirrored_y()) == sndm_encode(m).mirrored_y());
  }
}
