#include "iqdet/toy/detector.hpp"

#include <cmath>
#include <stdexcept>

#include "iqdet/rng.hpp"

namespace iqdet {
namespace {

int out_extent(int in, int stride) { return (in + 2 - 3) / stride + 1; }

Matrix im2col(const FeatureGrid& in, int stride, int out_h, int out_w) {
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(in.channels) * 9,
                             static_cast<Eigen::Index>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const Eigen::Index col = static_cast<Eigen::Index>(oy) * out_w + ox;
      for (int c = 0; c < in.channels; ++c)
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in.width) continue;
            cols((static_cast<Eigen::Index>(c) * 3 + ky) * 3 + kx, col) = in.at(c, iy, ix);
          }
        }
    }
  return cols;
}

void col2im(const Matrix& dcols, int channels, int in_h, int in_w, int stride,
            int out_h, int out_w, Array& d_in) {
  for (int oy = 0; oy < out_h; ++oy)
    for (int ox = 0; ox < out_w; ++ox) {
      const Eigen::Index col = static_cast<Eigen::Index>(oy) * out_w + ox;
      for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in_w) continue;
            d_in[(static_cast<Eigen::Index>(c) * in_h + iy) * in_w + ix] +=
                dcols((static_cast<Eigen::Index>(c) * 3 + ky) * 3 + kx, col);
          }
        }
    }
}

void glorot_fill(Matrix& w, Rng& rng) {
  const Scalar bound = std::sqrt(6.0 / static_cast<Scalar>(w.rows() + w.cols()));
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
}

}  // namespace

ConvLayer make_conv(int in_ch, int out_ch, int stride, bool relu) {
  ConvLayer layer;
  layer.in_ch = in_ch;
  layer.out_ch = out_ch;
  layer.stride = stride;
  layer.relu = relu;
  layer.w = Matrix::Zero(out_ch, static_cast<Eigen::Index>(in_ch) * 9);
  layer.b = Vector::Zero(out_ch);
  return layer;
}

FeatureGrid conv_forward(const ConvLayer& layer, const FeatureGrid& in, ConvCache* cache) {
  if (in.channels != layer.in_ch) throw std::domain_error("conv channel mismatch");
  const int out_h = out_extent(in.height, layer.stride);
  const int out_w = out_extent(in.width, layer.stride);
  Matrix cols = im2col(in, layer.stride, out_h, out_w);
  Matrix pre = layer.w * cols;
  pre.colwise() += layer.b;

  FeatureGrid out(layer.out_ch, out_h, out_w, in.stride * layer.stride);
  for (int c = 0; c < layer.out_ch; ++c)
    for (Eigen::Index p = 0; p < pre.cols(); ++p) {
      const Scalar v = pre(c, p);
      out.data[static_cast<Eigen::Index>(c) * pre.cols() + p] =
          layer.relu ? std::max<Scalar>(v, 0) : v;
    }
  if (cache) {
    cache->cols = std::move(cols);
    cache->pre = std::move(pre);
    cache->in_h = in.height;
    cache->in_w = in.width;
    cache->out_h = out_h;
    cache->out_w = out_w;
  }
  return out;
}

Array conv_backward(const ConvLayer& layer, const ConvCache& cache, const Array& d_out,
                    Matrix& dw, Vector& db) {
  const Eigen::Index n = static_cast<Eigen::Index>(cache.out_h) * cache.out_w;
  Matrix d_pre(layer.out_ch, n);
  for (int c = 0; c < layer.out_ch; ++c)
    for (Eigen::Index p = 0; p < n; ++p) {
      Scalar g = d_out[static_cast<Eigen::Index>(c) * n + p];
      if (layer.relu && cache.pre(c, p) <= 0) g = 0;
      d_pre(c, p) = g;
    }
  dw.noalias() += d_pre * cache.cols.transpose();
  db.noalias() += d_pre.rowwise().sum();
  const Matrix dcols = layer.w.transpose() * d_pre;
  Array d_in = Array::Zero(static_cast<Eigen::Index>(layer.in_ch) * cache.in_h * cache.in_w);
  col2im(dcols, layer.in_ch, cache.in_h, cache.in_w, layer.stride, cache.out_h, cache.out_w, d_in);
  return d_in;
}

ToyDetector init_detector(std::uint64_t seed, const ToyDetectorConfig& config) {
  if (config.num_classes < 1 || config.channels < 1 || config.levels() < 1)
    throw std::domain_error("degenerate detector config");
  ToyDetector det;
  det.config = config;
  const int ch = config.channels;
  det.stem1 = make_conv(1, ch, 2, true);
  det.stem2 = make_conv(ch, ch, 2, true);
  for (int l = 0; l < config.levels(); ++l) det.level_convs.push_back(make_conv(ch, ch, 2, true));
  det.head_cls = make_conv(ch, config.num_classes, 1, false);
  det.head_reg = make_conv(ch, 4, 1, false);
  det.head_aux = make_conv(ch, 1, 1, false);

  std::uint64_t salt = 0x10;
  auto fill = [&](ConvLayer& layer) {
    Rng rng(Rng::derive_seed(seed, salt++));
    glorot_fill(layer.w, rng);
  };
  fill(det.stem1);
  fill(det.stem2);
  for (auto& lvl : det.level_convs) fill(lvl);
  fill(det.head_cls);
  fill(det.head_reg);
  fill(det.head_aux);
  det.head_cls.b.setConstant(-std::log((1.0 - 0.01) / 0.01));
  return det;
}

DetectorActivations detector_forward(const ToyDetector& det, const FeatureGrid& image) {
  DetectorActivations acts;
  acts.g1 = conv_forward(det.stem1, image, &acts.c_stem1);
  acts.g2 = conv_forward(det.stem2, acts.g1, &acts.c_stem2);
  const int levels = det.config.levels();
  acts.c_level.resize(levels);
  acts.c_cls.resize(levels);
  acts.c_reg.resize(levels);
  acts.c_aux.resize(levels);
  const FeatureGrid* prev = &acts.g2;
  for (int l = 0; l < levels; ++l) {
    acts.features.push_back(conv_forward(det.level_convs[l], *prev, &acts.c_level[l]));
    prev = &acts.features.back();
  }
  for (int l = 0; l < levels; ++l) {
    LevelPredictions p;
    p.cls = conv_forward(det.head_cls, acts.features[l], &acts.c_cls[l]);
    p.reg = conv_forward(det.head_reg, acts.features[l], &acts.c_reg[l]);
    p.aux = conv_forward(det.head_aux, acts.features[l], &acts.c_aux[l]);
    acts.preds.push_back(std::move(p));
  }
  return acts;
}

DetectorGrads DetectorGrads::zero(const ToyDetector& det) {
  DetectorGrads g;
  g.stem1_w = Matrix::Zero(det.stem1.w.rows(), det.stem1.w.cols());
  g.stem1_b = Vector::Zero(det.stem1.b.size());
  g.stem2_w = Matrix::Zero(det.stem2.w.rows(), det.stem2.w.cols());
  g.stem2_b = Vector::Zero(det.stem2.b.size());
  for (const auto& lvl : det.level_convs) {
    g.level_w.push_back(Matrix::Zero(lvl.w.rows(), lvl.w.cols()));
    g.level_b.push_back(Vector::Zero(lvl.b.size()));
  }
  g.cls_w = Matrix::Zero(det.head_cls.w.rows(), det.head_cls.w.cols());
  g.cls_b = Vector::Zero(det.head_cls.b.size());
  g.reg_w = Matrix::Zero(det.head_reg.w.rows(), det.head_reg.w.cols());
  g.reg_b = Vector::Zero(det.head_reg.b.size());
  g.aux_w = Matrix::Zero(det.head_aux.w.rows(), det.head_aux.w.cols());
  g.aux_b = Vector::Zero(det.head_aux.b.size());
  return g;
}

void DetectorGrads::accumulate(const DetectorGrads& other) {
  stem1_w += other.stem1_w;
  stem1_b += other.stem1_b;
  stem2_w += other.stem2_w;
  stem2_b += other.stem2_b;
  for (std::size_t l = 0; l < level_w.size(); ++l) {
    level_w[l] += other.level_w[l];
    level_b[l] += other.level_b[l];
  }
  cls_w += other.cls_w;
  cls_b += other.cls_b;
  reg_w += other.reg_w;
  reg_b += other.reg_b;
  aux_w += other.aux_w;
  aux_b += other.aux_b;
}

void DetectorGrads::scale(Scalar s) {
  stem1_w *= s;
  stem1_b *= s;
  stem2_w *= s;
  stem2_b *= s;
  for (std::size_t l = 0; l < level_w.size(); ++l) {
    level_w[l] *= s;
    level_b[l] *= s;
  }
  cls_w *= s;
  cls_b *= s;
  reg_w *= s;
  reg_b *= s;
  aux_w *= s;
  aux_b *= s;
}

DetectorGrads detector_backward(const ToyDetector& det, const DetectorActivations& acts,
                                const std::vector<PredictionGrads>& pred_grads,
                                const std::vector<Array>& feature_grads) {
  const int levels = det.config.levels();
  DetectorGrads g = DetectorGrads::zero(det);

  Array d_next;  // gradient flowing into features[l] from level_convs[l+1]
  for (int l = levels - 1; l >= 0; --l) {
    Array d_feat = conv_backward(det.head_cls, acts.c_cls[l], pred_grads[l].cls, g.cls_w, g.cls_b);
    d_feat += conv_backward(det.head_reg, acts.c_reg[l], pred_grads[l].reg, g.reg_w, g.reg_b);
    d_feat += conv_backward(det.head_aux, acts.c_aux[l], pred_grads[l].aux, g.aux_w, g.aux_b);
    if (!feature_grads.empty() && feature_grads[l].size() > 0) d_feat += feature_grads[l];
    if (l < levels - 1) d_feat += d_next;
    d_next = conv_backward(det.level_convs[l], acts.c_level[l], d_feat, g.level_w[l], g.level_b[l]);
  }
  const Array d_g1 = conv_backward(det.stem2, acts.c_stem2, d_next, g.stem2_w, g.stem2_b);
  conv_backward(det.stem1, acts.c_stem1, d_g1, g.stem1_w, g.stem1_b);
  return g;
}

void sgd_update(Matrix& w, Matrix& velocity, const Matrix& grad, Scalar lr, Scalar momentum) {
  velocity = momentum * velocity + grad;
  w -= lr * velocity;
}

void sgd_update(Vector& w, Vector& velocity, const Vector& grad, Scalar lr, Scalar momentum) {
  velocity = momentum * velocity + grad;
  w -= lr * velocity;
}

}  // namespace iqdet
