#pragma once

#include <cstdint>
#include <vector>

#include "coseg/grid.hpp"

namespace coseg {

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
  auto operator<=>(const Pixel&) const = default;
};

/// Euclidean distance of every pixel to the nearest boundary pixel. Distances
/// are held as exact squared integers; the root is taken on access.
class DistanceMap {
 public:
  DistanceMap(int width, int height, std::vector<std::int64_t> squared);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  std::int64_t squared_at(int x, int y) const {
    return squared_[static_cast<std::size_t>(y) * width_ + x];
  }
  double at(int x, int y) const;

  const std::vector<std::int64_t>& squared() const noexcept { return squared_; }
  FloatMap to_float_map() const;

 private:
  int width_;
  int height_;
  std::vector<std::int64_t> squared_;
};

/// Foreground pixels with at least one 4-neighbour in the background; pixels
/// outside the image count as background, except that a single-row or
/// single-column image is treated as 1-D (no neighbours across the missing
/// axis). Row-major order.
/// Throws EmptyForeground when the mask has no foreground pixel.
std::vector<Pixel> boundary_set(const BinaryMask& mask);

/// Exact EDT to boundary_set(mask), linear time (separable lower envelope of
/// parabolas, integer arithmetic throughout).
DistanceMap edt(const BinaryMask& mask);

/// O(N·|B|) reference: squared distance of every pixel to its closest pixel
/// in `boundary`. Used by `edt --oracle` and the test suites.
std::vector<std::int64_t> brute_force_squared_edt(int width, int height,
                                                  const std::vector<Pixel>& boundary);

}  // namespace coseg
