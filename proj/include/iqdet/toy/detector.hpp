#pragma once

#include <cstdint>
#include <vector>

#include "iqdet/grid.hpp"
#include "iqdet/losses.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

// One 3x3 convolution (padding 1). Weights are out_ch x (in_ch*9) with
// kernel taps ordered (channel, ky, kx); forward runs as im2col + GEMM.
struct ConvLayer {
  int in_ch = 0, out_ch = 0, stride = 1;
  bool relu = false;
  Matrix w;
  Vector b;
};

ConvLayer make_conv(int in_ch, int out_ch, int stride, bool relu);

struct ConvCache {
  Matrix cols;  // (in_ch*9) x (out_h*out_w)
  Matrix pre;   // out_ch x (out_h*out_w), pre-activation
  int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
};

// out stride = in.stride * layer.stride; cache may be null.
FeatureGrid conv_forward(const ConvLayer& layer, const FeatureGrid& in,
                         ConvCache* cache);

// d_out is in FeatureGrid layout for the conv's output; accumulates into
// dw/db and returns d_in in FeatureGrid layout.
Array conv_backward(const ConvLayer& layer, const ConvCache& cache,
                    const Array& d_out, Matrix& dw, Vector& db);

struct ToyDetectorConfig {
  int num_classes = 2;
  int channels = 32;
  int image_size = 64;
  std::vector<Scalar> strides = {8.0, 16.0};

  int levels() const { return static_cast<int>(strides.size()); }
};

// Trunk: two stride-2 stem convs, then one stride-2 conv per level
// chained off the previous level's feature. Heads (3x3, stride 1) are
// shared across levels: class logits, log-distance regression, IoU logit.
struct ToyDetector {
  ToyDetectorConfig config;
  ConvLayer stem1, stem2;
  std::vector<ConvLayer> level_convs;
  ConvLayer head_cls, head_reg, head_aux;
};

// Glorot-uniform weights; the classification bias starts at the focal
// prior logit(-4.59...) so the dense zero-target term is small at init.
ToyDetector init_detector(std::uint64_t seed, const ToyDetectorConfig& config);

struct DetectorActivations {
  FeatureGrid g1, g2;                    // stem outputs
  std::vector<FeatureGrid> features;     // per-level trunk outputs
  std::vector<LevelPredictions> preds;   // per-level head outputs
  ConvCache c_stem1, c_stem2;
  std::vector<ConvCache> c_level, c_cls, c_reg, c_aux;
};

DetectorActivations detector_forward(const ToyDetector& det,
                                     const FeatureGrid& image);

// Gradient holder shaped like the detector's parameters.
struct DetectorGrads {
  Matrix stem1_w, stem2_w;
  Vector stem1_b, stem2_b;
  std::vector<Matrix> level_w;
  std::vector<Vector> level_b;
  Matrix cls_w, reg_w, aux_w;
  Vector cls_b, reg_b, aux_b;

  static DetectorGrads zero(const ToyDetector& det);
  void accumulate(const DetectorGrads& other);
  void scale(Scalar s);
};

// pred_grads come from the loss; feature_grads (may be empty) add the
// RoIAlign-path gradient flowing into each level's trunk feature.
DetectorGrads detector_backward(const ToyDetector& det,
                                const DetectorActivations& acts,
                                const std::vector<PredictionGrads>& pred_grads,
                                const std::vector<Array>& feature_grads);

void sgd_update(Matrix& w, Matrix& velocity, const Matrix& grad, Scalar lr,
                Scalar momentum);
void sgd_update(Vector& w, Vector& velocity, const Vector& grad, Scalar lr,
                Scalar momentum);

}  // namespace iqdet
