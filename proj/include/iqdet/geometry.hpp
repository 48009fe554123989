#pragma once

#include <string>
#include <vector>

#include "iqdet/types.hpp"

namespace iqdet {

// Axis-aligned box, corner form, continuous image-space pixels.
struct Box {
  Scalar x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return width() * height(); }
  Scalar cx() const { return 0.5 * (x1 + x2); }
  Scalar cy() const { return 0.5 * (y1 + y2); }
};

// Throws std::domain_error unless the box has strictly positive extent
// and finite coordinates.
void validate(const Box& b);

// Closed containment: edges count as inside.
bool contains(const Box& b, Scalar x, Scalar y);
// Open containment: the support of positive-sample candidacy.
bool contains_interior(const Box& b, Scalar x, Scalar y);

// Offset of a point from a box center, scaled so the box spans [-1,1]
// on both axes. Points outside the box map outside [-1,1].
struct NormalizedOffset {
  Scalar dx = 0, dy = 0;
};

// One detector pyramid level: a name and its image-space stride.
struct PyramidLevel {
  std::string name;
  int stride = 0;
};

struct PyramidSpec {
  std::vector<PyramidLevel> levels;
  int num_levels() const { return static_cast<int>(levels.size()); }
};

// Throws std::domain_error unless strides are strictly increasing powers
// of two and at least one level exists.
void validate(const PyramidSpec& spec);

// Stride-normalized distances from an interior point to the four box
// edges (left, top, right, bottom); all strictly positive.
struct RegressionTarget {
  Scalar l = 0, t = 0, r = 0, b = 0;
};

Scalar iou(const Box& a, const Box& b);

NormalizedOffset normalize_offset(Scalar x, Scalar y, const Box& gt);

// Inverse of normalize_offset: maps a normalized offset back to image
// space.
void offset_to_point(const NormalizedOffset& d, const Box& gt, Scalar* x,
                     Scalar* y);

RegressionTarget regression_target(Scalar x, Scalar y, const Box& gt,
                                   Scalar stride);

Box decode_box(Scalar x, Scalar y, const RegressionTarget& t, Scalar stride);

}  // namespace iqdet
