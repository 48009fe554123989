#include "iqdet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iqdet {

namespace {

Scalar sigmoid(Scalar z) {
  if (z >= 0) return 1 / (1 + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (1 + e);
}

// BCE(sigmoid(z), q) without forming probabilities near 0/1.
Scalar bce_from_logit(Scalar z, Scalar q) {
  return std::max(z, Scalar(0)) - q * z + std::log1p(std::exp(-std::abs(z)));
}

// d min(a, b) / da with the symmetric tie convention, so a perfect
// prediction sits at an exact stationary point of the IoU loss.
Scalar dmin_da(Scalar a, Scalar b) {
  if (a < b) return 1;
  if (a > b) return 0;
  return 0.5;
}

}  // namespace

LossGrad focal_soft(Scalar logit, Scalar q, Scalar alpha, Scalar gamma) {
  if (!(q >= 0 && q <= 1)) {
    throw std::domain_error("focal target must lie in [0, 1]");
  }
  const Scalar p = sigmoid(logit);
  const Scalar w = q * alpha + (1 - q) * (1 - alpha);
  const Scalar diff = std::abs(q - p);
  const Scalar mod = std::pow(diff, gamma);
  const Scalar ce = bce_from_logit(logit, q);

  LossGrad out;
  out.value = w * mod * ce;
  const Scalar dmod_dz = diff > 0 ? gamma * std::pow(diff, gamma - 1) *
                                        (p > q ? Scalar(1) : Scalar(-1)) *
                                        p * (1 - p)
                                  : Scalar(0);
  out.d_logit = w * (dmod_dz * ce + mod * (p - q));
  return out;
}

IouLossGrad iou_loss(const RegressionTarget& pred, const RegressionTarget& target) {
  if (!(target.l > 0 && target.t > 0 && target.r > 0 && target.b > 0)) {
    throw std::domain_error("iou_loss target distances must be positive");
  }
  const Scalar l = std::max(pred.l, kDistanceFloor);
  const Scalar t = std::max(pred.t, kDistanceFloor);
  const Scalar r = std::max(pred.r, kDistanceFloor);
  const Scalar b = std::max(pred.b, kDistanceFloor);

  const Scalar iw = std::min(l, target.l) + std::min(r, target.r);
  const Scalar ih = std::min(t, target.t) + std::min(b, target.b);
  const Scalar inter = iw * ih;
  const Scalar area_p = (l + r) * (t + b);
  const Scalar area_t = (target.l + target.r) * (target.t + target.b);
  const Scalar uni = area_p + area_t - inter;

  IouLossGrad out;
  out.iou = inter / uni;
  out.value = std::log(uni) - std::log(inter);

  const auto axis_grad = [&](Scalar v, Scalar tv, Scalar ortho_inter,
                             Scalar own_extent) {
    const Scalar d_inter = dmin_da(v, tv) * ortho_inter;
    const Scalar d_union = own_extent - d_inter;
    return d_union / uni - d_inter / inter;
  };
  // ortho_inter: the intersection extent on the other axis; own_extent:
  // d(area_p)/d(component).
  const Scalar dl = axis_grad(l, target.l, ih, t + b);
  const Scalar dt = axis_grad(t, target.t, iw, l + r);
  const Scalar dr = axis_grad(r, target.r, ih, t + b);
  const Scalar db = axis_grad(b, target.b, iw, l + r);
  out.d_pred.l = pred.l > kDistanceFloor ? dl : 0;
  out.d_pred.t = pred.t > kDistanceFloor ? dt : 0;
  out.d_pred.r = pred.r > kDistanceFloor ? dr : 0;
  out.d_pred.b = pred.b > kDistanceFloor ? db : 0;
  return out;
}

LossGrad bce(Scalar logit, Scalar target) {
  if (!(target >= 0 && target <= 1)) {
    throw std::domain_error("bce target must lie in [0, 1]");
  }
  LossGrad out;
  out.value = bce_from_logit(logit, target);
  out.d_logit = sigmoid(logit) - target;
  return out;
}

ProbLossGrad bce_prob(Scalar prob, Scalar target) {
  if (!(target >= 0 && target <= 1)) {
    throw std::domain_error("bce target must lie in [0, 1]");
  }
  constexpr Scalar kEps = 1e-6;
  const Scalar p = std::clamp(prob, kEps, 1 - kEps);
  ProbLossGrad out;
  out.value = -target * std::log(p) - (1 - target) * std::log1p(-p);
  out.d_prob = (prob > kEps && prob < 1 - kEps) ? (p - target) / (p * (1 - p))
                                                : Scalar(0);
  return out;
}

TotalLossResult total_loss(const AssignmentResult& assignment,
                           const std::vector<LevelPredictions>& predictions,
                           const std::vector<GtInstance>& gts,
                           Scalar lambda_iq, bool with_iq) {
  TotalLossResult res;
  res.grids.reserve(predictions.size());
  for (const LevelPredictions& lp : predictions) {
    PredictionGrads g;
    g.cls = Array::Zero(lp.cls.data.size());
    g.reg = Array::Zero(lp.reg.data.size());
    g.aux = Array::Zero(lp.aux.data.size());
    res.grids.push_back(std::move(g));
  }
  res.gmm_grads.resize(gts.size());
  for (std::size_t inst = 0; inst < gts.size(); ++inst) {
    res.gmm_grads[inst].reserve(predictions.size());
    for (std::size_t level = 0; level < predictions.size(); ++level) {
      res.gmm_grads[inst].push_back(
          GmmGrad::zero(assignment.gmms[inst][level].components()));
    }
  }

  const int n_pos = static_cast<int>(assignment.positives.size());
  res.positive_count = n_pos;
  const Scalar pos_norm = Scalar(1) / std::max(n_pos, 1);

  // (cell, class) pairs inside a positive's stencil are supervised through
  // the stencil readout and leave the dense zero-target set.
  std::vector<std::vector<std::uint8_t>> covered;
  covered.reserve(predictions.size());
  for (const LevelPredictions& lp : predictions) {
    covered.emplace_back(static_cast<std::size_t>(lp.cls.data.size()), 0);
  }
  for (const SampleEntry& e : assignment.positives) {
    const int plane = predictions[e.level].cls.height * predictions[e.level].cls.width;
    const int cls_id = gts[e.instance].class_id;
    for (int k = 0; k < 4; ++k) {
      if (e.stencil.weights[k] > 0) {
        covered[e.level][cls_id * plane + e.stencil.cells[k]] = 1;
      }
    }
  }

  Scalar cls_sum = 0, reg_sum = 0, aux_sum = 0, iou_sum = 0;

  // Positive samples: readout through the stencil, loss at the point,
  // gradient scattered back through the same stencil.
  for (int s = 0; s < n_pos; ++s) {
    const SampleEntry& e = assignment.positives[s];
    const SoftTarget& t = assignment.targets[s];
    const LevelPredictions& lp = predictions[e.level];
    PredictionGrads& lg = res.grids[e.level];
    const int plane = lp.cls.height * lp.cls.width;
    const int cls_id = gts[e.instance].class_id;

    const auto readout = [&](const FeatureGrid& grid, int channel) {
      Scalar v = 0;
      for (int k = 0; k < 4; ++k) {
        v += e.stencil.weights[k] * grid.data[channel * plane + e.stencil.cells[k]];
      }
      return v;
    };
    const auto scatter = [&](Array& grad, int channel, Scalar up) {
      for (int k = 0; k < 4; ++k) {
        grad[channel * plane + e.stencil.cells[k]] += up * e.stencil.weights[k];
      }
    };

    const LossGrad cls = focal_soft(readout(lp.cls, cls_id), t.cls);
    cls_sum += cls.value;
    scatter(lg.cls, cls_id, cls.d_logit * pos_norm);

    RegressionTarget dist;
    const Scalar raw_l = readout(lp.reg, 0);
    const Scalar raw_t = readout(lp.reg, 1);
    const Scalar raw_r = readout(lp.reg, 2);
    const Scalar raw_b = readout(lp.reg, 3);
    dist.l = std::exp(raw_l);
    dist.t = std::exp(raw_t);
    dist.r = std::exp(raw_r);
    dist.b = std::exp(raw_b);
    const IouLossGrad reg = iou_loss(dist, t.reg);
    reg_sum += reg.value;
    iou_sum += reg.iou;
    scatter(lg.reg, 0, reg.d_pred.l * dist.l * pos_norm);
    scatter(lg.reg, 1, reg.d_pred.t * dist.t * pos_norm);
    scatter(lg.reg, 2, reg.d_pred.r * dist.r * pos_norm);
    scatter(lg.reg, 3, reg.d_pred.b * dist.b * pos_norm);

    // Auxiliary head learns the predicted box's IoU; the IoU itself is a
    // detached target.
    const LossGrad aux = bce(readout(lp.aux, 0), reg.iou);
    aux_sum += aux.value;
    scatter(lg.aux, 0, aux.d_logit * pos_norm);
  }

  // Every (cell, class) outside the positive stencils carries a zero target,
  // in-box and negative alike.
  for (std::size_t level = 0; level < predictions.size(); ++level) {
    const FeatureGrid& cls = predictions[level].cls;
    Array& grad = res.grids[level].cls;
    for (Eigen::Index idx = 0; idx < cls.data.size(); ++idx) {
      if (covered[level][idx]) continue;
      const LossGrad lg = focal_soft(cls.data[idx], 0);
      cls_sum += lg.value;
      grad[idx] += lg.d_logit * pos_norm;
    }
  }

  // Quality supervision pairs, per instance per level.
  Scalar iq_sum = 0;
  int n_pairs = 0;
  if (with_iq) {
    for (std::size_t inst = 0; inst < gts.size(); ++inst) {
      for (std::size_t level = 0; level < predictions.size(); ++level) {
        const FeatureGrid& reg = predictions[level].reg;
        FeatureGrid dist(4, reg.height, reg.width, reg.stride);
        dist.data = reg.data.exp();
        const auto pairs = iq_supervision_pairs(
            gts[inst].box, assignment.gmms[inst][level], dist);
        n_pairs += static_cast<int>(pairs.size());
        for (const IqPair& pair : pairs) {
          const ProbLossGrad pl = bce_prob(pair.p_qua, pair.p_iou);
          iq_sum += pl.value;
          const DensityGrad dg = quality_target_grad(
              assignment.gmms[inst][level], pair.offset);
          GmmGrad& acc = res.gmm_grads[inst][level];
          acc.mu += pl.d_prob * dg.mu;
          acc.sigma += pl.d_prob * dg.sigma;
          acc.pi += pl.d_prob * dg.pi;
        }
      }
    }
    const Scalar pair_norm = Scalar(1) / std::max(n_pairs, 1);
    for (auto& per_inst : res.gmm_grads) {
      for (GmmGrad& g : per_inst) {
        g.mu *= lambda_iq * pair_norm;
        g.sigma *= lambda_iq * pair_norm;
        g.pi *= lambda_iq * pair_norm;
      }
    }
    iq_sum *= pair_norm;
  }
  res.iq_pair_count = n_pairs;

  res.report.l_cls = cls_sum * pos_norm;
  res.report.l_reg = n_pos > 0 ? reg_sum / n_pos : 0;
  res.report.l_aux = n_pos > 0 ? aux_sum / n_pos : 0;
  res.report.l_iq = iq_sum;
  res.report.lambda_iq = lambda_iq;
  res.report.total = res.report.l_cls + res.report.l_reg + res.report.l_aux +
                     lambda_iq * res.report.l_iq;
  res.mean_positive_iou = n_pos > 0 ? iou_sum / n_pos : 0;
  return res;
}

}  // namespace iqdet
