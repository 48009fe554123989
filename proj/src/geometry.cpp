#include "iqdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iqdet {

void validate(const Box& b) {
  if (!(std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
        std::isfinite(b.y2))) {
    throw std::domain_error("box has non-finite coordinates");
  }
  if (!(b.x2 > b.x1 && b.y2 > b.y1)) {
    throw std::domain_error("box is degenerate (needs x2 > x1, y2 > y1)");
  }
}

bool contains(const Box& b, Scalar x, Scalar y) {
  return x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2;
}

bool contains_interior(const Box& b, Scalar x, Scalar y) {
  return x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
}

void validate(const PyramidSpec& spec) {
  if (spec.levels.empty()) {
    throw std::domain_error("pyramid needs at least one level");
  }
  int prev = 0;
  for (const auto& level : spec.levels) {
    const int s = level.stride;
    if (s <= 0 || (s & (s - 1)) != 0) {
      throw std::domain_error("pyramid stride must be a power of two");
    }
    if (s <= prev) {
      throw std::domain_error("pyramid strides must be strictly increasing");
    }
    prev = s;
  }
}

Scalar iou(const Box& a, const Box& b) {
  validate(a);
  validate(b);
  const Scalar ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Scalar iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0;
  const Scalar inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

NormalizedOffset normalize_offset(Scalar x, Scalar y, const Box& gt) {
  validate(gt);
  return {(x - gt.cx()) / (0.5 * gt.width()),
          (y - gt.cy()) / (0.5 * gt.height())};
}

void offset_to_point(const NormalizedOffset& d, const Box& gt, Scalar* x,
                     Scalar* y) {
  validate(gt);
  *x = gt.cx() + d.dx * 0.5 * gt.width();
  *y = gt.cy() + d.dy * 0.5 * gt.height();
}

RegressionTarget regression_target(Scalar x, Scalar y, const Box& gt,
                                   Scalar stride) {
  validate(gt);
  if (!(stride > 0)) throw std::domain_error("stride must be positive");
  if (!contains_interior(gt, x, y)) {
    throw std::domain_error("regression target needs a strictly interior point");
  }
  return {(x - gt.x1) / stride, (y - gt.y1) / stride, (gt.x2 - x) / stride,
          (gt.y2 - y) / stride};
}

Box decode_box(Scalar x, Scalar y, const RegressionTarget& t, Scalar stride) {
  if (!(stride > 0)) throw std::domain_error("stride must be positive");
  if (!(t.l > 0 && t.t > 0 && t.r > 0 && t.b > 0)) {
    throw std::domain_error("decode_box needs strictly positive distances");
  }
  return {x - t.l * stride, y - t.t * stride, x + t.r * stride,
          y + t.b * stride};
}

}  // namespace iqdet
