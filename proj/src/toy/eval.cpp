#include "iqdet/toy/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iqdet/rng.hpp"
#include "iqdet/toy/scene.hpp"

namespace iqdet {
namespace {

Scalar sigmoid(Scalar z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<Scalar>& scores,
                     Scalar iou_thresh, int topk) {
  if (boxes.size() != scores.size()) throw std::domain_error("nms: boxes/scores length mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> kept;
  for (int idx : order) {
    if (static_cast<int>(kept.size()) >= topk) break;
    bool suppressed = false;
    for (int k : kept)
      if (iou(boxes[idx], boxes[k]) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<Detection> detect_scene(const ToyDetector& det, const FeatureGrid& image,
                                    Scalar iou_thresh, int topk) {
  const DetectorActivations acts = detector_forward(det, image);
  const Scalar size_x = image.width * image.stride;
  const Scalar size_y = image.height * image.stride;

  std::vector<Detection> all;
  for (std::size_t l = 0; l < acts.preds.size(); ++l) {
    const auto& p = acts.preds[l];
    const Scalar stride = p.cls.stride;
    for (int i = 0; i < p.cls.height; ++i)
      for (int j = 0; j < p.cls.width; ++j) {
        const Scalar x = (j + 0.5) * stride, y = (i + 0.5) * stride;
        RegressionTarget dist{std::exp(p.reg.at(0, i, j)), std::exp(p.reg.at(1, i, j)),
                              std::exp(p.reg.at(2, i, j)), std::exp(p.reg.at(3, i, j))};
        Box box = decode_box(x, y, dist, stride);
        box.x1 = std::max<Scalar>(box.x1, 0);
        box.y1 = std::max<Scalar>(box.y1, 0);
        box.x2 = std::min(box.x2, size_x);
        box.y2 = std::min(box.y2, size_y);
        const Scalar quality = sigmoid(p.aux.at(0, i, j));
        for (int c = 0; c < p.cls.channels; ++c)
          all.push_back({box, c, sigmoid(p.cls.at(c, i, j)) * quality});
      }
  }

  std::vector<Detection> out;
  const int num_classes = det.config.num_classes;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<Box> boxes;
    std::vector<Scalar> scores;
    std::vector<int> backref;
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i].class_id == c) {
        boxes.push_back(all[i].box);
        scores.push_back(all[i].score);
        backref.push_back(static_cast<int>(i));
      }
    for (int k : nms(boxes, scores, iou_thresh, topk)) out.push_back(all[backref[k]]);
  }
  return out;
}

Scalar average_precision(const std::vector<ScoredDetection>& detections,
                         const std::vector<std::vector<GtInstance>>& gts, int class_id,
                         Scalar iou_thresh) {
  int num_gt = 0;
  for (const auto& scene : gts)
    for (const auto& gt : scene)
      if (gt.class_id == class_id) ++num_gt;
  if (num_gt == 0) return 0;

  std::vector<int> order;
  for (std::size_t i = 0; i < detections.size(); ++i)
    if (detections[i].det.class_id == class_id) order.push_back(static_cast<int>(i));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return detections[a].det.score > detections[b].det.score;
  });

  std::vector<std::vector<bool>> matched(gts.size());
  for (std::size_t s = 0; s < gts.size(); ++s) matched[s].assign(gts[s].size(), false);

  std::vector<Scalar> precision, recall;
  int tp = 0, fp = 0;
  for (int idx : order) {
    const auto& d = detections[idx];
    int best = -1;
    Scalar best_iou = 0;
    const auto& scene_gts = gts[d.scene];
    for (std::size_t g = 0; g < scene_gts.size(); ++g) {
      if (scene_gts[g].class_id != class_id || matched[d.scene][g]) continue;
      const Scalar v = iou(d.det.box, scene_gts[g].box);
      if (v >= iou_thresh && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      matched[d.scene][best] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<Scalar>(tp) / (tp + fp));
    recall.push_back(static_cast<Scalar>(tp) / num_gt);
  }

  Scalar ap = 0;
  for (int r = 0; r <= 10; ++r) {
    const Scalar level = r / 10.0;
    Scalar best = 0;
    for (std::size_t i = 0; i < precision.size(); ++i)
      if (recall[i] >= level) best = std::max(best, precision[i]);
    ap += best / 11.0;
  }
  return ap;
}

EvalResult evaluate(const Checkpoint& ckpt, int num_scenes, std::uint64_t seed) {
  if (num_scenes < 1) throw std::domain_error("evaluate needs at least one scene");
  const TrainConfig& cfg = ckpt.config;
  const bool with_iq = cfg.mode == "iqdet";

  std::vector<std::vector<GtInstance>> gts;
  std::vector<ScoredDetection> detections;
  Scalar iou_sum = 0;
  int pos_count = 0;
  int gt_count = 0;

  for (int s = 0; s < num_scenes; ++s) {
    const SyntheticScene scene = generate_scene(scene_stream_seed(seed, s), cfg.image_size);
    gts.push_back(scene.instances);
    gt_count += static_cast<int>(scene.instances.size());

    for (const auto& d : detect_scene(ckpt.detector, scene.image)) detections.push_back({s, d});

    const DetectorActivations acts = detector_forward(ckpt.detector, scene.image);
    const int levels = ckpt.detector.config.levels();
    std::vector<std::vector<QualityGMM>> gmms(scene.instances.size(),
                                              std::vector<QualityGMM>(levels));
    for (std::size_t i = 0; i < scene.instances.size(); ++i)
      for (int l = 0; l < levels; ++l)
        gmms[i][l] = with_iq
                         ? encode(ckpt.encoder,
                                  roialign(acts.features[l], scene.instances[i].box, cfg.pool,
                                           cfg.samples_per_bin),
                                  ckpt.encoder_config)
                         : fixed_gmm(cfg.center_sigma);

    std::vector<GridGeom> geoms;
    for (const auto& f : acts.features) geoms.push_back(f.geom());
    Rng arng(assign_stream_seed(seed, s));
    const AssignmentResult assignment = assign_image(
        scene.instances, gmms, geoms, {cfg.draws_per_level, cfg.k_select}, arng);

    for (const auto& pos : assignment.positives) {
      const auto& preds = acts.preds[pos.level];
      const Vector raw = bilinear(preds.reg, pos.x, pos.y).value;
      const RegressionTarget dist{std::exp(raw(0)), std::exp(raw(1)), std::exp(raw(2)),
                                  std::exp(raw(3))};
      const Box decoded = decode_box(pos.x, pos.y, dist, preds.reg.stride);
      iou_sum += iou(decoded, scene.instances[pos.instance].box);
      ++pos_count;
    }
  }

  EvalResult result;
  result.scenes = num_scenes;
  result.gt_count = gt_count;
  int classes_seen = 0;
  for (int c = 0; c < cfg.num_classes; ++c) {
    bool present = false;
    for (const auto& scene : gts)
      for (const auto& gt : scene) present |= gt.class_id == c;
    if (!present) continue;
    ++classes_seen;
    result.ap50 += average_precision(detections, gts, c, 0.5);
    result.ap75 += average_precision(detections, gts, c, 0.75);
  }
  if (classes_seen > 0) {
    result.ap50 /= classes_seen;
    result.ap75 /= classes_seen;
  }
  result.mean_pos_iou = pos_count > 0 ? iou_sum / pos_count : 0;
  return result;
}

}  // namespace iqdet
