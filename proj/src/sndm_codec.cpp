#include "coseg/sndm_codec.hpp"

#include <algorithm>
#include <limits>

#include "coseg/distance_transform.hpp"
#include "coseg/error.hpp"

namespace coseg {

Sndm sndm_encode(const BinaryMask& mask) {
  const std::size_t fg_count = mask.count_foreground();
  if (fg_count == 0 || fg_count == mask.size()) {
    throw Error(ErrorCode::DegenerateMask, "SNDM needs both foreground and background pixels");
  }
  const DistanceMap dist = edt(mask);
  const int w = mask.width();
  const int h = mask.height();

  // Per-region extremes; index 0 = background, 1 = foreground.
  double lo[2] = {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  double hi[2] = {0.0, 0.0};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int r = mask.at(x, y) ? 1 : 0;
      const double d = dist.at(x, y);
      lo[r] = std::min(lo[r], d);
      hi[r] = std::max(hi[r], d);
    }
  }

  std::vector<float> values(mask.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int r = mask.at(x, y) ? 1 : 0;
      const double sign = r == 1 ? 1.0 : -1.0;
      double magnitude = 1.0;
      if (hi[r] > lo[r]) {
        magnitude = 1.0 - 0.9 * (dist.at(x, y) - lo[r]) / (hi[r] - lo[r]);
      }
      const float m = std::clamp(static_cast<float>(magnitude), kSndmInner, 1.0f);
      values[static_cast<std::size_t>(y) * w + x] = static_cast<float>(sign) * m;
    }
  }
  return Sndm(w, h, std::move(values));
}

BinaryMask sndm_decode(const Sndm& map) { return threshold_to_mask(map); }

}  // namespace coseg
