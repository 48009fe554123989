#include "iqdet/serialize.hpp"

#include <fstream>
#include <stdexcept>

namespace iqdet {
namespace {

Json box_to_json(const Box& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be [x1, y1, x2, y2]");
  Box b{j[0].get<Scalar>(), j[1].get<Scalar>(), j[2].get<Scalar>(), j[3].get<Scalar>()};
  validate(b);
  return b;
}

}  // namespace

Json gmm_to_json(const QualityGMM& gmm) {
  Json mu = Json::array(), sigma = Json::array(), pi = Json::array();
  for (int k = 0; k < gmm.components(); ++k) {
    mu.push_back(Json::array({gmm.mu(k, 0), gmm.mu(k, 1)}));
    sigma.push_back(Json::array({gmm.sigma(k, 0), gmm.sigma(k, 1)}));
    pi.push_back(gmm.pi(k));
  }
  return Json{{"mu", mu}, {"sigma", sigma}, {"pi", pi}};
}

QualityGMM gmm_from_json(const Json& j) {
  if (!j.contains("mu") || !j.contains("sigma") || !j.contains("pi"))
    throw std::runtime_error("gmm json needs mu, sigma, pi");
  const auto& mu = j.at("mu");
  const auto& sigma = j.at("sigma");
  const auto& pi = j.at("pi");
  const auto k = static_cast<Eigen::Index>(pi.size());
  if (k == 0 || static_cast<Eigen::Index>(mu.size()) != k || static_cast<Eigen::Index>(sigma.size()) != k)
    throw std::runtime_error("gmm component counts disagree");
  QualityGMM gmm;
  gmm.mu.resize(k, 2);
  gmm.sigma.resize(k, 2);
  gmm.pi.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (mu[i].size() != 2 || sigma[i].size() != 2)
      throw std::runtime_error("gmm mu/sigma entries must be [x, y]");
    gmm.mu(i, 0) = mu[i][0].get<Scalar>();
    gmm.mu(i, 1) = mu[i][1].get<Scalar>();
    gmm.sigma(i, 0) = sigma[i][0].get<Scalar>();
    gmm.sigma(i, 1) = sigma[i][1].get<Scalar>();
    gmm.pi(i) = pi[i].get<Scalar>();
  }
  validate(gmm);
  return gmm;
}

Json gmm_levels_to_json(const std::vector<QualityGMM>& gmms) {
  Json levels = Json::array();
  for (const auto& g : gmms) levels.push_back(gmm_to_json(g));
  return Json{{"levels", levels}};
}

std::vector<QualityGMM> gmm_levels_from_json(const Json& j) {
  const Json* arr = nullptr;
  if (j.is_array())
    arr = &j;
  else if (j.contains("levels"))
    arr = &j.at("levels");
  else
    return {gmm_from_json(j)};  // a bare single GMM applies to every level
  std::vector<QualityGMM> out;
  for (const auto& g : *arr) out.push_back(gmm_from_json(g));
  if (out.empty()) throw std::runtime_error("gmm levels list is empty");
  return out;
}

Json annotations_to_json(const Annotations& ann) {
  Json instances = Json::array();
  for (const auto& gt : ann.instances)
    instances.push_back(Json{{"box", box_to_json(gt.box)}, {"class", gt.class_id}});
  return Json{{"image_size", Json::array({ann.image_width, ann.image_height})},
              {"instances", instances}};
}

Annotations annotations_from_json(const Json& j) {
  Annotations ann;
  if (!j.contains("image_size") || j.at("image_size").size() != 2)
    throw std::runtime_error("annotations need image_size [w, h]");
  ann.image_width = j.at("image_size")[0].get<Scalar>();
  ann.image_height = j.at("image_size")[1].get<Scalar>();
  if (!(ann.image_width > 0) || !(ann.image_height > 0))
    throw std::domain_error("image_size must be positive");
  for (const auto& inst : j.value("instances", Json::array())) {
    GtInstance gt;
    gt.box = box_from_json(inst.at("box"));
    gt.class_id = inst.at("class").get<int>();
    if (gt.class_id < 0) throw std::domain_error("class id must be non-negative");
    if (gt.box.x2 > ann.image_width || gt.box.y2 > ann.image_height || gt.box.x1 < 0 || gt.box.y1 < 0)
      throw std::domain_error("box extends outside the image");
    ann.instances.push_back(gt);
  }
  return ann;
}

std::vector<std::vector<int>> mask_to_rle(const NegativeMask& mask) {
  std::vector<std::vector<int>> rows;
  rows.reserve(static_cast<std::size_t>(mask.height));
  for (int i = 0; i < mask.height; ++i) {
    std::vector<int> runs;
    std::uint8_t want = 0;  // runs alternate starting with the zero count
    int j = 0;
    while (j < mask.width) {
      int n = 0;
      while (j < mask.width && mask.cells[i * mask.width + j] == want) ++n, ++j;
      runs.push_back(n);
      want ^= 1;
    }
    rows.push_back(std::move(runs));
  }
  return rows;
}

NegativeMask mask_from_rle(int height, int width, const std::vector<std::vector<int>>& rows) {
  if (static_cast<int>(rows.size()) != height) throw std::runtime_error("rle row count mismatch");
  NegativeMask mask;
  mask.height = height;
  mask.width = width;
  mask.cells.assign(static_cast<std::size_t>(height) * width, 0);
  for (int i = 0; i < height; ++i) {
    int j = 0;
    std::uint8_t value = 0;
    for (int run : rows[i]) {
      if (run < 0 || j + run > width) throw std::runtime_error("rle run exceeds row width");
      for (int n = 0; n < run; ++n) mask.cells[i * width + j++] = value;
      value ^= 1;
    }
    if (j != width) throw std::runtime_error("rle row does not cover width");
  }
  return mask;
}

Json assignment_to_json(const AssignmentResult& result, const PyramidSpec& pyramid,
                        const std::vector<GridGeom>& geoms) {
  if (geoms.size() != pyramid.levels.size())
    throw std::runtime_error("assignment dump: geometry/level count mismatch");
  Json levels = Json::array();
  for (std::size_t l = 0; l < pyramid.levels.size(); ++l)
    levels.push_back(Json{{"name", pyramid.levels[l].name},
                          {"stride", pyramid.levels[l].stride},
                          {"height", geoms[l].height},
                          {"width", geoms[l].width}});

  Json positives = Json::array();
  for (std::size_t i = 0; i < result.positives.size(); ++i) {
    const auto& s = result.positives[i];
    const auto& t = result.targets[i];
    positives.push_back(Json{
        {"instance", s.instance},
        {"level", s.level},
        {"draw", s.draw},
        {"point", Json::array({s.x, s.y})},
        {"offset", Json::array({s.offset.dx, s.offset.dy})},
        {"quality", s.quality},
        {"cells", Json::array({s.stencil.cells[0], s.stencil.cells[1], s.stencil.cells[2], s.stencil.cells[3]})},
        {"weights", Json::array({s.stencil.weights[0], s.stencil.weights[1], s.stencil.weights[2], s.stencil.weights[3]})},
        {"cls_target", t.cls},
        {"reg_target", Json::array({t.reg.l, t.reg.t, t.reg.r, t.reg.b})},
    });
  }

  Json negatives = Json::array();
  for (std::size_t lvl = 0; lvl < result.negatives.size(); ++lvl) {
    const auto& m = result.negatives[lvl];
    negatives.push_back(Json{{"level", static_cast<int>(lvl)},
                             {"height", m.height},
                             {"width", m.width},
                             {"rle", mask_to_rle(m)}});
  }

  Json gmms = Json::array();
  for (const auto& per_level : result.gmms) {
    Json row = Json::array();
    for (const auto& g : per_level) row.push_back(gmm_to_json(g));
    gmms.push_back(row);
  }

  return Json{{"levels", levels},
              {"positives", positives},
              {"negatives", negatives},
              {"gmms", gmms}};
}

Json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return Json::parse(f);
}

void save_json(const std::string& path, const Json& j) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace iqdet
