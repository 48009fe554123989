#include "iqdet/assign.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iqdet {

SampleSet build_candidates(const Box& gt, const std::vector<QualityGMM>& gmms,
                           const std::vector<GridGeom>& levels,
                           int draws_per_level, Rng& rng) {
  validate(gt);
  if (gmms.size() != levels.size()) {
    throw std::domain_error("need one GMM per pyramid level");
  }
  if (draws_per_level < 1) throw std::domain_error("draws_per_level must be >= 1");

  SampleSet out;
  out.reserve(levels.size() * draws_per_level);
  for (int level = 0; level < static_cast<int>(levels.size()); ++level) {
    const auto draws = sample_offsets(gmms[level], draws_per_level, rng);
    for (int d = 0; d < draws_per_level; ++d) {
      SampleEntry e;
      e.level = level;
      e.draw = d;
      e.offset = draws[d].offset;
      e.quality = draws[d].quality;
      offset_to_point(e.offset, gt, &e.x, &e.y);
      e.stencil = interp_stencil(levels[level], e.x, e.y);
      out.push_back(e);
    }
  }
  return out;
}

SampleSet select_topk(const SampleSet& candidates, int k) {
  if (k < 1) throw std::domain_error("k must be >= 1");
  SampleSet sorted = candidates;
  // Stable sort keeps (level, draw) ascending among equal qualities;
  // candidates arrive in that order from build_candidates.
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const SampleEntry& a, const SampleEntry& b) {
                     return a.quality > b.quality;
                   });
  if (static_cast<int>(sorted.size()) > k) sorted.resize(k);
  return sorted;
}

std::vector<SoftTarget> soft_targets(const SampleSet& selected,
                                     const std::vector<GtInstance>& gts,
                                     const std::vector<GridGeom>& levels) {
  std::vector<SoftTarget> out;
  out.reserve(selected.size());
  for (const SampleEntry& e : selected) {
    SoftTarget t;
    t.cls = e.quality;
    t.reg = regression_target(e.x, e.y, gts[e.instance].box,
                              levels[e.level].stride);
    out.push_back(t);
  }
  return out;
}

NegativeMask negative_mask(const std::vector<GtInstance>& gts,
                           const GridGeom& geom) {
  NegativeMask mask;
  mask.height = geom.height;
  mask.width = geom.width;
  mask.cells.assign(static_cast<std::size_t>(geom.height) * geom.width, 1);
  for (int i = 0; i < geom.height; ++i) {
    const Scalar y = (i + 0.5) * geom.stride;
    for (int j = 0; j < geom.width; ++j) {
      const Scalar x = (j + 0.5) * geom.stride;
      for (const GtInstance& gt : gts) {
        if (contains(gt.box, x, y)) {
          mask.cells[i * geom.width + j] = 0;
          break;
        }
      }
    }
  }
  return mask;
}

std::vector<IqPair> iq_supervision_pairs(const Box& gt, const QualityGMM& gmm,
                                         const FeatureGrid& distances) {
  validate(gt);
  if (distances.channels != 4) {
    throw std::domain_error("distance grid needs 4 channels (l,t,r,b)");
  }
  std::vector<IqPair> pairs;
  for (int i = 0; i < distances.height; ++i) {
    const Scalar y = (i + 0.5) * distances.stride;
    for (int j = 0; j < distances.width; ++j) {
      const Scalar x = (j + 0.5) * distances.stride;
      if (!contains_interior(gt, x, y)) continue;
      IqPair p;
      p.cell = i * distances.width + j;
      p.offset = normalize_offset(x, y, gt);
      p.p_qua = quality_target(gmm, p.offset);
      // IoU of the decoded box against gt, evaluated in distance space so
      // an overflowed (infinite) prediction degrades to IoU 0 instead of
      // producing a non-finite box.
      const Scalar s = distances.stride;
      const Scalar pl = std::max(distances.at(0, i, j), kDistanceFloor) * s;
      const Scalar pt = std::max(distances.at(1, i, j), kDistanceFloor) * s;
      const Scalar pr = std::max(distances.at(2, i, j), kDistanceFloor) * s;
      const Scalar pb = std::max(distances.at(3, i, j), kDistanceFloor) * s;
      const Scalar gl = x - gt.x1, gtt = y - gt.y1, gr = gt.x2 - x, gb = gt.y2 - y;
      const Scalar inter = (std::min(pl, gl) + std::min(pr, gr)) *
                           (std::min(pt, gtt) + std::min(pb, gb));
      const Scalar uni = (pl + pr) * (pt + pb) + (gl + gr) * (gtt + gb) - inter;
      p.p_iou = inter / uni;
      pairs.push_back(p);
    }
  }
  return pairs;
}

AssignmentResult assign_image(const std::vector<GtInstance>& gts,
                              const std::vector<std::vector<QualityGMM>>& gmms,
                              const std::vector<GridGeom>& levels,
                              const AssignConfig& config, Rng& rng) {
  if (gts.size() != gmms.size()) {
    throw std::domain_error("need one GMM set per instance");
  }
  AssignmentResult result;
  result.gmms = gmms;
  for (int inst = 0; inst < static_cast<int>(gts.size()); ++inst) {
    SampleSet candidates = build_candidates(gts[inst].box, gmms[inst], levels,
                                            config.draws_per_level, rng);
    for (SampleEntry& e : candidates) e.instance = inst;
    SampleSet selected = select_topk(candidates, config.k_select);
    result.positives.insert(result.positives.end(), selected.begin(),
                            selected.end());
  }
  result.targets = soft_targets(result.positives, gts, levels);
  result.negatives.reserve(levels.size());
  for (const GridGeom& geom : levels) {
    result.negatives.push_back(negative_mask(gts, geom));
  }
  return result;
}

}  // namespace iqdet
