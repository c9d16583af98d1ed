#include <doctest.h>

#include <chrono>
#include <cmath>

#include "coseg/distance_transform.hpp"
#include "helpers.hpp"

using namespace coseg;

namespace {

// Independent reference: boundary by direct neighbour inspection, distances
// by exhaustive search.
std::vector<std::int64_t> reference_squared(const BinaryMask& m) {
  const int w = m.width(), h = m.height();
  auto fg = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && m.at(x, y); };
  std::vector<std::pair<int, int>> boundary;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!fg(x, y)) continue;
      bool b = false;
      if (h > 1 || w == 1) b = b || !fg(x, y - 1) || !fg(x, y + 1);
      if (w > 1 || h == 1) b = b || !fg(x - 1, y) || !fg(x + 1, y);
      if (b) boundary.emplace_back(x, y);
    }
  std::vector<std::int64_t> out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::int64_t best = INT64_MAX;
      for (auto [bx, by] : boundary) {
        const std::int64_t dx = x - bx, dy = y - by;
        best = std::min(best, dx * dx + dy * dy);
      }
      out.push_back(best);
    }
  return out;
}

}  // namespace

TEST_CASE("boundary_set examples") {
  const BinaryMask center = testutil::mask_from(3, 3, "....#....");
  CHECK(boundary_set(center) == std::vector<Pixel>{{1, 1}});

  const BinaryMask full(3, 3, true);
  const auto b = boundary_set(full);
  CHECK(b.size() == 8);
  CHECK(std::find(b.begin(), b.end(), Pixel{1, 1}) == b.end());

  const BinaryMask row = testutil::mask_from(7, 1, "..###..");
  CHECK(boundary_set(row) == std::vector<Pixel>{{2, 0}, {4, 0}});
  const BinaryMask column = testutil::mask_from(1, 7, "..###..");
  CHECK(boundary_set(column) == std::vector<Pixel>{{0, 2}, {0, 4}});
  CHECK(boundary_set(BinaryMask(1, 1, true)) == std::vector<Pixel>{{0, 0}});
  CHECK(boundary_set(BinaryMask(5, 1, true)) == std::vector<Pixel>{{0, 0}, {4, 0}});

  // The middle row of a thick band: x=3 has foreground on all four sides.
  const BinaryMask band = testutil::mask_from(7, 3, "..###....###....###..");
  const auto bb = boundary_set(band);
  CHECK(std::find(bb.begin(), bb.end(), Pixel{3, 1}) == bb.end());
  CHECK(std::find(bb.begin(), bb.end(), Pixel{2, 1}) != bb.end());
  CHECK(std::find(bb.begin(), bb.end(), Pixel{4, 1}) != bb.end());

  CHECK_THROWS_CODE(boundary_set(BinaryMask(4, 4)), ErrorCode::EmptyForeground);
}

TEST_CASE("edt examples") {
  const DistanceMap c = edt(testutil::mask_from(3, 3, "....#...."));
  CHECK(c.at(1, 1) == 0.0);
  CHECK(c.at(1, 0) == 1.0);
  CHECK(c.at(0, 1) == 1.0);
  CHECK(c.at(0, 0) == doctest::Approx(std::sqrt(2.0)));
  CHECK(c.squared_at(2, 2) == 2);

  const DistanceMap r = edt(testutil::mask_from(7, 1, "..###.."));
  const std::vector<std::int64_t> row_sq{4, 1, 0, 1, 0, 1, 4};
  CHECK(r.squared() == row_sq);
  CHECK(r.at(0, 0) == 2.0);

  const DistanceMap band = edt(testutil::mask_from(7, 3, "..###....###....###.."));
  const std::vector<double> mid{2, 1, 0, 1, 0, 1, 2};
  for (int x = 0; x < 7; ++x) CHECK(band.at(x, 1) == mid[static_cast<std::size_t>(x)]);

  CHECK_THROWS_CODE(edt(BinaryMask(5, 2)), ErrorCode::EmptyForeground);
}

TEST_CASE("edt matches the reference on random masks of varied size and density") {
  SplitMix64 rng(2024);
  for (int t = 0; t < 200; ++t) {
    const int w = static_cast<int>(rng.uniform_int(1, 48)), h = static_cast<int>(rng.uniform_int(1, 48));
    BinaryMask m = testutil::random_mask(w, h, rng, rng.uniform(0.02, 0.98));
    if (m.count_foreground() == 0) m.set(0, 0, true);
    REQUIRE(edt(m).squared() == reference_squared(m));
  }
}

TEST_CASE("edt matches the reference on 200 random 64x64 masks") {
  SplitMix64 rng(64);
  for (int t = 0; t < 200; ++t) {
    BinaryMask m = testutil::random_mask(64, 64, rng, rng.uniform(0.001, 0.99));
    if (m.count_foreground() == 0) m.set(10, 20, true);
    REQUIRE(edt(m).squared() == reference_squared(m));
  }
}

TEST_CASE("edt matches the reference on every 3x3 mask") {
  for (int bits = 1; bits < 512; ++bits) {
    BinaryMask m(3, 3);
    for (int i = 0; i < 9; ++i) m.set(i % 3, i / 3, (bits >> i) & 1);
    REQUIRE(edt(m).squared() == reference_squared(m));
  }
}

TEST_CASE("library brute force agrees with the test reference") {
  SplitMix64 rng(7);
  for (int t = 0; t < 30; ++t) {
    BinaryMask m = testutil::random_mask(20, 13, rng, 0.3);
    if (m.count_foreground() == 0) m.set(3, 3, true);
    CHECK(brute_force_squared_edt(20, 13, boundary_set(m)) == reference_squared(m));
  }
}

TEST_CASE("edt is zero exactly on the boundary and 1-Lipschitz") {
  SplitMix64 rng(11);
  for (int t = 0; t < 20; ++t) {
    BinaryMask m = testutil::random_mask(24, 17, rng, 0.6);
    if (m.count_foreground() == 0) m.set(0, 0, true);
    const DistanceMap d = edt(m);
    const auto b = boundary_set(m);
    for (int y = 0; y < 17; ++y)
      for (int x = 0; x < 24; ++x) {
        const bool on_b = std::find(b.begin(), b.end(), Pixel{x, y}) != b.end();
        CHECK((d.squared_at(x, y) == 0) == on_b);
        if (x + 1 < 24) CHECK(std::abs(d.at(x, y) - d.at(x + 1, y)) <= 1.0 + 1e-12);
        if (y + 1 < 17) CHECK(std::abs(d.at(x, y) - d.at(x, y + 1)) <= 1.0 + 1e-12);
      }
  }
}

TEST_CASE("edt commutes with mirroring") {
  SplitMix64 rng(13);
  for (int t = 0; t < 50; ++t) {
    BinaryMask m = testutil::random_mask(15, 9, rng, 0.4);
    if (m.count_foreground() == 0) m.set(2, 2, true);
    const DistanceMap d = edt(m);
    const DistanceMap dx = edt(m.mirrored_x());
    const DistanceMap dy = edt(m.mirrored_y());
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 15; ++x) {
        CHECK(dx.squared_at(14 - x, y) == d.squared_at(x, y));
        CHECK(dy.squared_at(x, 8 - y) == d.squared_at(x, y));
      }
  }
}

TEST_CASE("edt of a 512x512 mask is fast") {
  SplitMix64 rng(17);
  BinaryMask m(512, 512);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x) m.set(x, y, (x - 256) * (x - 256) + (y - 200) * (y - 200) < 150 * 150);
  m.set(5, 500, true);
  const auto t0 = std::chrono::steady_clock::now();
  const DistanceMap d = edt(m);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  CHECK(d.squared_at(256, 200) == 149 * 149);
  MESSAGE("512x512 edt: " << ms << " ms");
  CHECK(ms < 100.0);
}
