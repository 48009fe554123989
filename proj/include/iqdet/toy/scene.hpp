#pragma once

#include <cstdint>
#include <vector>

#include "iqdet/assign.hpp"
#include "iqdet/grid.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

// A 1-channel synthetic detection scene. Class 0 renders as a filled
// gradient rectangle, class 1 as a thin ellipse ring with an empty
// interior and one angular gap; both shapes touch their annotation box so
// boxes match the rendered extents.
struct SyntheticScene {
  FeatureGrid image;  // 1 x size x size, stride 1, values in [0, 1]
  std::vector<GtInstance> instances;
  std::uint64_t seed = 0;
};

// Deterministic per seed: 1-4 boxes, each fully inside the image with at
// least one pixel of margin; later boxes avoid IoU > 0.25 with earlier
// ones when a placement can be found within 20 tries.
SyntheticScene generate_scene(std::uint64_t seed, int image_size = 64);

}  // namespace iqdet
