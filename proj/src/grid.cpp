#include "iqdet/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iqdet {

namespace {

struct Axis {
  int lo = 0, hi = 0;   // neighbor cell indices along the axis
  Scalar frac = 0;      // weight on hi
  bool clamped = false; // point fell in the border margin (or outside span)
};

Axis resolve_axis(Scalar coord, Scalar stride, int n) {
  Axis a;
  Scalar u = coord / stride - 0.5;
  if (u <= 0) {
    // The margin below the first cell center reads the border cell and is
    // constant, so its (left-) derivative is zero.
    u = 0;
    a.clamped = true;
  } else if (u > n - 1) {
    u = n - 1;
    a.clamped = true;
  }
  if (!a.clamped && u == std::floor(u)) {
    // Exactly on a cell-center gridline: take the left interval as the
    // subgradient side.
    a.lo = static_cast<int>(u) - 1;
    a.hi = a.lo + 1;
    a.frac = 1;
    return a;
  }
  a.lo = std::min(static_cast<int>(std::floor(u)), n - 1);
  a.hi = std::min(a.lo + 1, n - 1);
  a.frac = u - a.lo;
  return a;
}

void check_extent(const GridGeom& geom, Scalar x, Scalar y) {
  if (!(x >= 0 && x <= geom.extent_x() && y >= 0 && y <= geom.extent_y())) {
    throw std::domain_error("interpolation point outside grid extent");
  }
}

}  // namespace

InterpStencil interp_stencil(const GridGeom& geom, Scalar x, Scalar y) {
  check_extent(geom, x, y);
  const Axis ax = resolve_axis(x, geom.stride, geom.width);
  const Axis ay = resolve_axis(y, geom.stride, geom.height);
  InterpStencil s;
  s.cells = {ay.lo * geom.width + ax.lo, ay.lo * geom.width + ax.hi,
             ay.hi * geom.width + ax.lo, ay.hi * geom.width + ax.hi};
  s.weights = {(1 - ay.frac) * (1 - ax.frac), (1 - ay.frac) * ax.frac,
               ay.frac * (1 - ax.frac), ay.frac * ax.frac};
  return s;
}

Interp bilinear(const FeatureGrid& grid, Scalar x, Scalar y) {
  Interp out;
  out.stencil = interp_stencil(grid.geom(), x, y);
  out.value = Vector::Zero(grid.channels);
  const Eigen::Index plane = static_cast<Eigen::Index>(grid.height) * grid.width;
  for (int c = 0; c < grid.channels; ++c) {
    const Scalar* base = grid.data.data() + c * plane;
    Scalar v = 0;
    for (int k = 0; k < 4; ++k) v += out.stencil.weights[k] * base[out.stencil.cells[k]];
    out.value[c] = v;
  }
  return out;
}

InterpGrad bilinear_grad(const FeatureGrid& grid, Scalar x, Scalar y) {
  const GridGeom geom = grid.geom();
  check_extent(geom, x, y);
  const Axis ax = resolve_axis(x, geom.stride, geom.width);
  const Axis ay = resolve_axis(y, geom.stride, geom.height);

  InterpGrad out;
  out.stencil = interp_stencil(geom, x, y);
  out.dpoint = Matrix::Zero(grid.channels, 2);
  for (int c = 0; c < grid.channels; ++c) {
    const Scalar v00 = grid.at(c, ay.lo, ax.lo);
    const Scalar v01 = grid.at(c, ay.lo, ax.hi);
    const Scalar v10 = grid.at(c, ay.hi, ax.lo);
    const Scalar v11 = grid.at(c, ay.hi, ax.hi);
    // In the clamped margin the read is constant along that axis.
    if (!ax.clamped) {
      out.dpoint(c, 0) =
          ((1 - ay.frac) * (v01 - v00) + ay.frac * (v11 - v10)) / geom.stride;
    }
    if (!ay.clamped) {
      out.dpoint(c, 1) =
          ((1 - ax.frac) * (v10 - v00) + ax.frac * (v11 - v01)) / geom.stride;
    }
  }
  return out;
}

namespace {

void check_roi(const FeatureGrid& grid, const Box& roi, int pool,
               int samples_per_bin) {
  validate(roi);
  if (pool < 1) throw std::domain_error("pool must be >= 1");
  if (samples_per_bin < 1) throw std::domain_error("samples_per_bin must be >= 1");
  const GridGeom geom = grid.geom();
  if (roi.x2 <= 0 || roi.y2 <= 0 || roi.x1 >= geom.extent_x() ||
      roi.y1 >= geom.extent_y()) {
    throw std::domain_error("roi does not intersect the grid extent");
  }
}

Scalar clamp_extent(Scalar v, Scalar hi) { return std::clamp(v, Scalar(0), hi); }

}  // namespace

PooledFeature roialign(const FeatureGrid& grid, const Box& roi, int pool,
                       int samples_per_bin) {
  check_roi(grid, roi, pool, samples_per_bin);
  const GridGeom geom = grid.geom();
  const Scalar bin_w = roi.width() / pool;
  const Scalar bin_h = roi.height() / pool;
  const Scalar inv_count =
      Scalar(1) / (static_cast<Scalar>(samples_per_bin) * samples_per_bin);

  PooledFeature out;
  out.channels = grid.channels;
  out.pool = pool;
  out.data = Array::Zero(static_cast<Eigen::Index>(grid.channels) * pool * pool);
  for (int by = 0; by < pool; ++by) {
    for (int bx = 0; bx < pool; ++bx) {
      for (int sy = 0; sy < samples_per_bin; ++sy) {
        for (int sx = 0; sx < samples_per_bin; ++sx) {
          const Scalar x = clamp_extent(
              roi.x1 + (bx + (sx + 0.5) / samples_per_bin) * bin_w,
              geom.extent_x());
          const Scalar y = clamp_extent(
              roi.y1 + (by + (sy + 0.5) / samples_per_bin) * bin_h,
              geom.extent_y());
          const Interp interp = bilinear(grid, x, y);
          for (int c = 0; c < grid.channels; ++c) {
            out.data[(static_cast<Eigen::Index>(c) * pool + by) * pool + bx] +=
                interp.value[c] * inv_count;
          }
        }
      }
    }
  }
  return out;
}

Array roialign_backward(const FeatureGrid& grid, const Box& roi, int pool,
                        int samples_per_bin, const Array& upstream) {
  check_roi(grid, roi, pool, samples_per_bin);
  if (upstream.size() != static_cast<Eigen::Index>(grid.channels) * pool * pool) {
    throw std::domain_error("upstream size does not match pooled shape");
  }
  const GridGeom geom = grid.geom();
  const Scalar bin_w = roi.width() / pool;
  const Scalar bin_h = roi.height() / pool;
  const Scalar inv_count =
      Scalar(1) / (static_cast<Scalar>(samples_per_bin) * samples_per_bin);
  const Eigen::Index plane = static_cast<Eigen::Index>(grid.height) * grid.width;

  Array grad = Array::Zero(grid.data.size());
  for (int by = 0; by < pool; ++by) {
    for (int bx = 0; bx < pool; ++bx) {
      for (int sy = 0; sy < samples_per_bin; ++sy) {
        for (int sx = 0; sx < samples_per_bin; ++sx) {
          const Scalar x = clamp_extent(
              roi.x1 + (bx + (sx + 0.5) / samples_per_bin) * bin_w,
              geom.extent_x());
          const Scalar y = clamp_extent(
              roi.y1 + (by + (sy + 0.5) / samples_per_bin) * bin_h,
              geom.extent_y());
          const InterpStencil s = interp_stencil(geom, x, y);
          for (int c = 0; c < grid.channels; ++c) {
            const Scalar up =
                upstream[(static_cast<Eigen::Index>(c) * pool + by) * pool + bx] *
                inv_count;
            for (int k = 0; k < 4; ++k) {
              grad[c * plane + s.cells[k]] += up * s.weights[k];
            }
          }
        }
      }
    }
  }
  return grad;
}

PooledFeature roipool(const FeatureGrid& grid, const Box& roi, int pool) {
  check_roi(grid, roi, pool, 1);
  // Bin edges in cell units; cell k spans [k, k+1).
  const Scalar cx1 = roi.x1 / grid.stride;
  const Scalar cx2 = roi.x2 / grid.stride;
  const Scalar cy1 = roi.y1 / grid.stride;
  const Scalar cy2 = roi.y2 / grid.stride;

  const auto cell_range = [](Scalar lo, Scalar hi, int n, int* first, int* last) {
    *first = std::clamp(static_cast<int>(std::floor(lo)), 0, n - 1);
    *last = std::clamp(static_cast<int>(std::ceil(hi)) - 1, 0, n - 1);
    if (*last < *first) *first = *last;
  };

  PooledFeature out;
  out.channels = grid.channels;
  out.pool = pool;
  out.data = Array::Zero(static_cast<Eigen::Index>(grid.channels) * pool * pool);
  for (int by = 0; by < pool; ++by) {
    int i0, i1;
    cell_range(cy1 + by * (cy2 - cy1) / pool, cy1 + (by + 1) * (cy2 - cy1) / pool,
               grid.height, &i0, &i1);
    for (int bx = 0; bx < pool; ++bx) {
      int j0, j1;
      cell_range(cx1 + bx * (cx2 - cx1) / pool,
                 cx1 + (bx + 1) * (cx2 - cx1) / pool, grid.width, &j0, &j1);
      for (int c = 0; c < grid.channels; ++c) {
        Scalar best = grid.at(c, i0, j0);
        for (int i = i0; i <= i1; ++i) {
          for (int j = j0; j <= j1; ++j) best = std::max(best, grid.at(c, i, j));
        }
        out.data[(static_cast<Eigen::Index>(c) * pool + by) * pool + bx] = best;
      }
    }
  }
  return out;
}

}  // namespace iqdet
