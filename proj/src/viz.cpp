#include "iqdet/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace iqdet {
namespace {

NormalizedOffset pixel_offset(int r, int c, int resolution) {
  return {(c + 0.5) / resolution * 2.0 - 1.0, (r + 0.5) / resolution * 2.0 - 1.0};
}

std::vector<std::uint8_t> quality_plane(const QualityGMM& gmm, int resolution) {
  if (resolution < 16) throw std::domain_error("viz resolution must be >= 16");
  validate(gmm);
  std::vector<std::uint8_t> plane(static_cast<std::size_t>(resolution) * resolution);
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c) {
      const Scalar q = quality_target(gmm, pixel_offset(r, c, resolution));
      plane[static_cast<std::size_t>(r) * resolution + c] =
          static_cast<std::uint8_t>(std::lround(255.0 * q));
    }
  return plane;
}

void append_header(std::vector<std::uint8_t>& out, const char* magic, int resolution) {
  const std::string header =
      std::string(magic) + "\n" + std::to_string(resolution) + " " + std::to_string(resolution) + "\n255\n";
  out.insert(out.end(), header.begin(), header.end());
}

}  // namespace

std::vector<std::uint8_t> render_quality_pgm(const QualityGMM& gmm, int resolution) {
  std::vector<std::uint8_t> out;
  append_header(out, "P5", resolution);
  const auto plane = quality_plane(gmm, resolution);
  out.insert(out.end(), plane.begin(), plane.end());
  return out;
}

std::vector<std::uint8_t> render_overlay_ppm(const QualityGMM& gmm, int resolution,
                                             const std::vector<OffsetSample>& samples) {
  std::vector<std::uint8_t> out;
  append_header(out, "P6", resolution);
  const auto plane = quality_plane(gmm, resolution);
  std::vector<std::uint8_t> rgb(plane.size() * 3);
  for (std::size_t i = 0; i < plane.size(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = plane[i];
  for (const auto& s : samples) {
    const int c0 = std::clamp(static_cast<int>(std::floor((s.offset.dx + 1.0) / 2.0 * resolution)), 0, resolution - 1);
    const int r0 = std::clamp(static_cast<int>(std::floor((s.offset.dy + 1.0) / 2.0 * resolution)), 0, resolution - 1);
    for (int dr = -1; dr <= 1; ++dr)
      for (int dc = -1; dc <= 1; ++dc) {
        const int r = r0 + dr, c = c0 + dc;
        if (r < 0 || r >= resolution || c < 0 || c >= resolution) continue;
        const std::size_t i = static_cast<std::size_t>(r) * resolution + c;
        rgb[3 * i] = 255;
        rgb[3 * i + 1] = 0;
        rgb[3 * i + 2] = 0;
      }
  }
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace iqdet
