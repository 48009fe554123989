#pragma once

#include <cstdint>
#include <vector>

#include "iqdet/geometry.hpp"
#include "iqdet/grid.hpp"
#include "iqdet/qdist.hpp"
#include "iqdet/rng.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

struct GtInstance {
  Box box;
  int class_id = 0;
};

// One resampled candidate location, strictly inside its instance's box.
struct SampleEntry {
  int instance = 0;
  int level = 0;
  int draw = 0;  // draw index within (instance, level)
  Scalar x = 0, y = 0;
  NormalizedOffset offset;
  Scalar quality = 0;  // quality_target of the level GMM at the offset
  InterpStencil stencil;
};

using SampleSet = std::vector<SampleEntry>;

struct SoftTarget {
  Scalar cls = 0;  // the sample's quality value
  RegressionTarget reg;
};

// Per-level grid mask; true marks a cell whose center lies outside every
// ground-truth box.
struct NegativeMask {
  int height = 0, width = 0;
  std::vector<std::uint8_t> cells;  // row-major

  bool at(int i, int j) const { return cells[i * width + j] != 0; }
};

struct AssignConfig {
  int draws_per_level = 12;
  int k_select = 12;
};

// Draws draws_per_level offsets per level from that level's GMM and maps
// them into image space; entries are ordered level-major then by draw.
SampleSet build_candidates(const Box& gt, const std::vector<QualityGMM>& gmms,
                           const std::vector<GridGeom>& levels,
                           int draws_per_level, Rng& rng);

// The k entries with largest quality across all levels; ties keep
// (level, draw) ascending order. Fewer candidates than k returns all.
SampleSet select_topk(const SampleSet& candidates, int k);

// Classification target = quality, regression target in the level's
// stride units.
std::vector<SoftTarget> soft_targets(const SampleSet& selected,
                                     const std::vector<GtInstance>& gts,
                                     const std::vector<GridGeom>& levels);

NegativeMask negative_mask(const std::vector<GtInstance>& gts,
                           const GridGeom& geom);

// One supervision pair per grid cell whose center is strictly inside the
// box: the quality surface value and the IoU of the box decoded from the
// per-cell predicted distances (4 x H x W, stride units, floored at
// kDistanceFloor).
struct IqPair {
  int cell = 0;  // plane index i*W + j
  NormalizedOffset offset;
  Scalar p_qua = 0;
  Scalar p_iou = 0;
};

std::vector<IqPair> iq_supervision_pairs(const Box& gt, const QualityGMM& gmm,
                                         const FeatureGrid& distances);

struct AssignmentResult {
  SampleSet positives;              // selected entries, instance-major order
  std::vector<SoftTarget> targets;  // aligned with positives
  std::vector<NegativeMask> negatives;          // per level
  std::vector<std::vector<QualityGMM>> gmms;    // [instance][level]
};

// Full per-image assignment: candidates + top-k per instance, soft
// targets, negative masks. Deterministic for a given Rng state.
AssignmentResult assign_image(const std::vector<GtInstance>& gts,
                              const std::vector<std::vector<QualityGMM>>& gmms,
                              const std::vector<GridGeom>& levels,
                              const AssignConfig& config, Rng& rng);

}  // namespace iqdet
