#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iqdet/qdist.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

// Quality surface over the normalized offset square [-1,1]^2 as a binary
// P5 PGM. Pixel (row r, col c) of an R x R image reads the surface at
// dx = (c + 0.5) / R * 2 - 1, dy likewise from r; brightness is
// round(255 * quality_target). Resolution must be >= 16.
std::vector<std::uint8_t> render_quality_pgm(const QualityGMM& gmm, int resolution);

// Same surface as grayscale P6 PPM with sample offsets painted red
// (3x3 blocks, clipped at the border).
std::vector<std::uint8_t> render_overlay_ppm(const QualityGMM& gmm, int resolution,
                                             const std::vector<OffsetSample>& samples);

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace iqdet
