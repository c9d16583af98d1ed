#pragma once

#include "coseg/grid.hpp"

namespace coseg {

/// Signed normalized distance map: foreground pixels in [0.1, 1], background
/// pixels in [-1, -0.1]. Magnitude is 1 next to the object boundary and falls
/// off affinely with distance to 0.1 at the deepest pixel of each region.
using Sndm = FloatMap;

inline constexpr float kSndmInner = 0.1f;

/// Encodes a two-class mask. Throws DegenerateMask when either class is empty.
Sndm sndm_encode(const BinaryMask& mask);

/// Sign decoding; identical to threshold_to_mask.
BinaryMask sndm_decode(const Sndm& map);

}  // namespace coseg
