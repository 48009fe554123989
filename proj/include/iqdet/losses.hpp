#pragma once

#include <vector>

#include "iqdet/assign.hpp"
#include "iqdet/geometry.hpp"
#include "iqdet/grid.hpp"
#include "iqdet/qde.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

struct LossGrad {
  Scalar value = 0;
  Scalar d_logit = 0;
};

// Focal loss extended to soft targets q in [0,1]:
//   [q*alpha + (1-q)*(1-alpha)] * |q - p|^gamma * BCE(p, q),  p = sigmoid.
// q = 0 recovers the hard-negative form (1-alpha) * p^gamma * -log(1-p).
LossGrad focal_soft(Scalar logit, Scalar q, Scalar alpha = 0.25,
                    Scalar gamma = 2.0);

// -log IoU in the shared-origin distance parameterization. Predictions
// are floored at kDistanceFloor before use; floored components get zero
// gradient. Also reports the IoU itself (the auxiliary-head target).
struct IouLossGrad {
  Scalar value = 0;
  RegressionTarget d_pred;
  Scalar iou = 0;
};

IouLossGrad iou_loss(const RegressionTarget& pred, const RegressionTarget& target);

// Numerically stable logit-space binary cross-entropy.
LossGrad bce(Scalar logit, Scalar target);

// Probability-space BCE for predictions already in [0,1] (the quality
// surface); the probability is clamped to [1e-6, 1-1e-6] and clamped
// points get zero gradient.
struct ProbLossGrad {
  Scalar value = 0;
  Scalar d_prob = 0;
};

ProbLossGrad bce_prob(Scalar prob, Scalar target);

struct LossReport {
  Scalar l_cls = 0, l_reg = 0, l_aux = 0, l_iq = 0;
  Scalar lambda_iq = 1;
  Scalar total = 0;
};

// Raw per-level detector outputs: classification logits
// (num_classes x H x W), regression log-distances (4 x H x W; exp maps
// them to stride units), auxiliary quality logit (1 x H x W).
struct LevelPredictions {
  FeatureGrid cls;
  FeatureGrid reg;
  FeatureGrid aux;
};

struct PredictionGrads {
  Array cls, reg, aux;  // FeatureGrid layouts matching LevelPredictions
};

struct TotalLossResult {
  LossReport report;
  std::vector<PredictionGrads> grids;          // per level
  std::vector<std::vector<GmmGrad>> gmm_grads; // [instance][level]
  Scalar mean_positive_iou = 0;
  int positive_count = 0;
  int iq_pair_count = 0;
};

// Assembles the four-term training loss for one image.
//  - classification: focal over interpolated logits at positives (soft
//    target = quality) plus zero-target focal at every (cell, class) not
//    under a positive's stencil, the sum normalized by the positive count;
//  - regression / auxiliary: IoU loss and BCE at positives, averaged
//    over positives;
//  - quality supervision: probability-space BCE between the quality
//    surface and the per-cell predicted-box IoU (detached), averaged
//    over pairs; this is the only term whose gradient reaches the GMMs.
// Sample positions and soft targets are constants with respect to the
// detector losses; gradients reach prediction grids only through the
// interpolation stencils.
TotalLossResult total_loss(const AssignmentResult& assignment,
                           const std::vector<LevelPredictions>& predictions,
                           const std::vector<GtInstance>& gts,
                           Scalar lambda_iq = 1.0, bool with_iq = true);

}  // namespace iqdet
