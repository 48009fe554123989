#pragma once

#include <array>

#include "iqdet/geometry.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

// Geometry of one feature-map level, independent of its values. Cell
// (i, j) has image-space center ((j+0.5)*stride, (i+0.5)*stride); the
// level's image extent is [0, width*stride] x [0, height*stride].
struct GridGeom {
  int height = 0, width = 0;
  Scalar stride = 1;

  Scalar extent_x() const { return width * stride; }
  Scalar extent_y() const { return height * stride; }
  int cells() const { return height * width; }
};

// A C x H x W value field, row-major per channel plane.
struct FeatureGrid {
  int channels = 0, height = 0, width = 0;
  Scalar stride = 1;
  Array data;  // size channels*height*width, index (c*H + i)*W + j

  FeatureGrid() = default;
  FeatureGrid(int c, int h, int w, Scalar s)
      : channels(c), height(h), width(w), stride(s),
        data(Array::Zero(static_cast<Eigen::Index>(c) * h * w)) {}

  Scalar& at(int c, int i, int j) {
    return data[(static_cast<Eigen::Index>(c) * height + i) * width + j];
  }
  Scalar at(int c, int i, int j) const {
    return data[(static_cast<Eigen::Index>(c) * height + i) * width + j];
  }
  Eigen::Map<ArrayRowMajor> channel(int c) {
    return {data.data() + static_cast<Eigen::Index>(c) * height * width,
            height, width};
  }
  Eigen::Map<const ArrayRowMajor> channel(int c) const {
    return {data.data() + static_cast<Eigen::Index>(c) * height * width,
            height, width};
  }
  GridGeom geom() const { return {height, width, stride}; }
};

// Four (plane cell index, weight) pairs; weights are nonnegative and sum
// to one. Cell indices address a single H x W channel plane (i*W + j).
struct InterpStencil {
  std::array<int, 4> cells{};
  std::array<Scalar, 4> weights{};
};

// Stencil of the bilinear read at an image-space point. Points in the
// half-cell margin between the extent edge and the outermost cell centers
// clamp onto the border cells; outside the extent is a domain error.
InterpStencil interp_stencil(const GridGeom& geom, Scalar x, Scalar y);

struct Interp {
  Vector value;  // one value per channel
  InterpStencil stencil;
};

Interp bilinear(const FeatureGrid& grid, Scalar x, Scalar y);

struct InterpGrad {
  InterpStencil stencil;  // d(value_c)/d(cell) is stencil weight, any c
  Matrix dpoint;          // channels x 2, d(value_c)/d(x, y)
};

InterpGrad bilinear_grad(const FeatureGrid& grid, Scalar x, Scalar y);

// RoIAligned C x pool x pool block; data layout matches FeatureGrid
// ([c][by][bx], row-major).
struct PooledFeature {
  int channels = 0, pool = 0;
  Array data;

  Scalar at(int c, int by, int bx) const {
    return data[(static_cast<Eigen::Index>(c) * pool + by) * pool + bx];
  }
};

PooledFeature roialign(const FeatureGrid& grid, const Box& roi, int pool,
                       int samples_per_bin);

// Scatters an upstream d(loss)/d(pooled) (C*pool*pool, PooledFeature
// layout) back onto the grid cells; returns a C*H*W array in FeatureGrid
// layout.
Array roialign_backward(const FeatureGrid& grid, const Box& roi, int pool,
                        int samples_per_bin, const Array& upstream);

// Quantized-bin max pooling (the RoIPool ablation path).
PooledFeature roipool(const FeatureGrid& grid, const Box& roi, int pool);

}  // namespace iqdet
