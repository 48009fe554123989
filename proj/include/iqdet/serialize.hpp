#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "iqdet/assign.hpp"
#include "iqdet/geometry.hpp"
#include "iqdet/qdist.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

using Json = nlohmann::ordered_json;

// Annotation file: {"image_size": [w, h], "instances": [{"box": [x1, y1, x2, y2], "class": c}]}
struct Annotations {
  Scalar image_width = 0;
  Scalar image_height = 0;
  std::vector<GtInstance> instances;
};

Json gmm_to_json(const QualityGMM& gmm);
QualityGMM gmm_from_json(const Json& j);
// A list of per-level GMMs: {"levels": [<gmm>, ...]}.
Json gmm_levels_to_json(const std::vector<QualityGMM>& gmms);
std::vector<QualityGMM> gmm_levels_from_json(const Json& j);

Json annotations_to_json(const Annotations& ann);
Annotations annotations_from_json(const Json& j);

// Negative mask rows as run-length counts, alternating and starting with
// the number of zeros (in-box cells); a leading zero count may be 0.
std::vector<std::vector<int>> mask_to_rle(const NegativeMask& mask);
NegativeMask mask_from_rle(int height, int width, const std::vector<std::vector<int>>& rows);

Json assignment_to_json(const AssignmentResult& result, const PyramidSpec& pyramid,
                        const std::vector<GridGeom>& geoms);

Json load_json(const std::string& path);
void save_json(const std::string& path, const Json& j);

}  // namespace iqdet
