#pragma once

#include <cstdint>
#include <vector>

#include "iqdet/toy/train.hpp"

namespace iqdet {

struct Detection {
  Box box;
  int class_id = 0;
  Scalar score = 0;
};

// Greedy descending-score suppression: a box is dropped when its IoU with
// any kept box exceeds iou_thresh. Score ties break toward the lower
// index. Returns kept indices in keep order, at most topk.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<Scalar>& scores,
                     Scalar iou_thresh = 0.6, int topk = 100);

// Decodes every cell of every level (score = sigmoid(cls) * sigmoid(aux),
// distances = exp(reg) * stride, boxes clipped to the image), then runs
// per-class NMS.
std::vector<Detection> detect_scene(const ToyDetector& det, const FeatureGrid& image,
                                    Scalar iou_thresh = 0.6, int topk = 100);

struct ScoredDetection {
  int scene = 0;
  Detection det;
};

// 11-point interpolated AP for one class; greedy max-IoU matching of
// score-ranked detections against unmatched ground truth.
Scalar average_precision(const std::vector<ScoredDetection>& detections,
                         const std::vector<std::vector<GtInstance>>& gts, int class_id,
                         Scalar iou_thresh);

struct EvalResult {
  Scalar ap50 = 0, ap75 = 0;
  Scalar mean_pos_iou = 0;  // IoU of decoded boxes at assignment positives
  int scenes = 0;
  int gt_count = 0;
};

// Held-out scenes drawn from the evaluation seed's streams; assignment
// for mean_pos_iou follows the checkpoint's mode (encoded GMMs for iqdet,
// the fixed center GMM otherwise).
EvalResult evaluate(const Checkpoint& ckpt, int num_scenes, std::uint64_t seed);

}  // namespace iqdet
