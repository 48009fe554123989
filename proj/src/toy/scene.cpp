#include "iqdet/toy/scene.hpp"

#include <cmath>
#include <stdexcept>

#include "iqdet/rng.hpp"

namespace iqdet {
namespace {

constexpr std::uint64_t kSceneSalt = 0x5ce8e5a1;

// Gradient fill with a fixed per-pixel slope and a random base level: the
// local intensity and its derivative carry no information about the box
// extent (the slope is size-independent and the base is random), so a
// local window that ends inside a large box sees nothing that localizes
// the far edges.
void paint_filled(FeatureGrid& img, const Box& b, Scalar base) {
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const Scalar x = j + 0.5, y = i + 0.5;
      if (contains(b, x, y)) img.at(0, i, j) = base + 0.006 * (x - b.x1);
    }
}

// Elliptical band of fixed pixel thickness hugging the box boundary, with
// one angular gap on a diagonal. The interior keeps the background
// texture, so the center of a large ring carries no evidence, while a
// window near the band sees an arc whose curvature fixes the full extent.
// The gap makes the evidence eccentric without moving the tight bounding
// box (the extreme points at 0/90/180/270 degrees stay painted).
void paint_ring(FeatureGrid& img, const Box& b, int gap_quadrant) {
  const Scalar rx = b.width() / 2, ry = b.height() / 2;
  const Scalar rmin = std::min(rx, ry);
  const Scalar outer = (rmin - 1.0) / rmin;                   // 1 px inset
  const Scalar inner = std::max(0.15, (rmin - 5.0) / rmin);   // 4 px band
  const Scalar gap_center = M_PI / 4 + gap_quadrant * M_PI / 2;
  const Scalar gap_half_width = 75.0 / 2 * M_PI / 180;
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const Scalar x = j + 0.5, y = i + 0.5;
      if (!contains(b, x, y)) continue;
      const Scalar nx = (x - b.cx()) / rx, ny = (y - b.cy()) / ry;
      const Scalar rho = std::sqrt(nx * nx + ny * ny);
      if (rho < inner || rho > outer) continue;
      const Scalar theta = std::atan2(ny, nx);
      const Scalar dist = std::abs(std::atan2(std::sin(theta - gap_center),
                                              std::cos(theta - gap_center)));
      if (dist < gap_half_width) continue;  // the gap keeps the background
      img.at(0, i, j) = 0.88;
    }
}

}  // namespace

SyntheticScene generate_scene(std::uint64_t seed, int image_size) {
  if (image_size < 48) throw std::domain_error("scene image_size must be >= 48");
  SyntheticScene scene;
  scene.seed = seed;
  scene.image = FeatureGrid(1, image_size, image_size, 1.0);
  Rng rng(Rng::derive_seed(seed, kSceneSalt));

  for (Eigen::Index i = 0; i < scene.image.data.size(); ++i)
    scene.image.data(i) = 0.06 + 0.06 * rng.uniform();

  // sqrt-biased sizes favor large boxes, whose far edges outrun any local
  // window; capped so every box fits with the 1 px placement margin.
  const Scalar max_extra = std::min<Scalar>(28.0, image_size - 26.0);
  const auto place = [&](Scalar w, Scalar h) {
    Box box;
    for (int attempt = 0; attempt < 20; ++attempt) {
      const Scalar x1 = 1.0 + (image_size - 2.0 - w) * rng.uniform();
      const Scalar y1 = 1.0 + (image_size - 2.0 - h) * rng.uniform();
      box = {x1, y1, x1 + w, y1 + h};
      bool clear = true;
      for (const auto& gt : scene.instances)
        if (iou(box, gt.box) > 0.25) {
          clear = false;
          break;
        }
      if (clear) break;  // otherwise the final attempt stands
    }
    return box;
  };

  int budget = 1 + rng.uniform_int(4);
  while (budget > 0) {
    // Nested pair: a small gradient box sits inside a large ring's empty
    // interior, so the ring's geometric center lies on another instance.
    if (budget >= 2 && rng.uniform() < 0.55) {
      const Scalar w = 40.0 + std::min<Scalar>(12.0, max_extra) * rng.uniform();
      const Scalar h = 40.0 + std::min<Scalar>(12.0, max_extra) * rng.uniform();
      const Box ring = place(w, h);
      const int gap = rng.uniform_int(4);
      // inner box at ~0.45 scale keeps pair IoU near 0.2 and leaves the
      // band untouched even after center jitter
      const Scalar iw = (0.42 + 0.06 * rng.uniform()) * w;
      const Scalar ih = (0.42 + 0.06 * rng.uniform()) * h;
      const Scalar jx = rng.uniform(-3.0, 3.0), jy = rng.uniform(-3.0, 3.0);
      const Box inner = {ring.cx() + jx - iw / 2, ring.cy() + jy - ih / 2,
                         ring.cx() + jx + iw / 2, ring.cy() + jy + ih / 2};
      // band painted last so the inner box's corners cannot clip it
      paint_filled(scene.image, inner, 0.45 + 0.15 * rng.uniform());
      paint_ring(scene.image, ring, gap);
      scene.instances.push_back({ring, 1});
      scene.instances.push_back({inner, 0});
      budget -= 2;
      continue;
    }
    const Scalar w = 24.0 + max_extra * std::sqrt(rng.uniform());
    const Scalar h = 24.0 + max_extra * std::sqrt(rng.uniform());
    const Box box = place(w, h);
    const int class_id = rng.uniform_int(2);
    if (class_id == 0) {
      paint_filled(scene.image, box, 0.45 + 0.15 * rng.uniform());
    } else {
      paint_ring(scene.image, box, rng.uniform_int(4));
    }
    scene.instances.push_back({box, class_id});
    budget -= 1;
  }
  return scene;
}

}  // namespace iqdet
