#pragma once

#include <cstdint>

#include "iqdet/grid.hpp"
#include "iqdet/qdist.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

// Encoder sizing plus the learnability switches: a head whose flag is off
// emits its fixed value and receives no gradient.
struct EncoderConfig {
  int channels = 32;
  int pool = 7;
  int hidden = 64;
  int k_components = 2;
  bool learn_mu = true;
  bool learn_sigma = true;
  bool learn_pi = true;
  Scalar fixed_mu = 0;
  Scalar fixed_sigma = 1;
  Scalar fixed_pi = 1;
  // When true, the pooled feature is averaged over its spatial extent
  // before the FC stack (the spatial-information ablation).
  bool global_pool = false;

  int input_dim() const {
    return global_pool ? channels : channels * pool * pool;
  }
};

// Two FC layers with ReLU, then three linear heads for raw mu, sigma, pi.
// One parameter set is shared across all pyramid levels.
struct EncoderWeights {
  Matrix w1;  // hidden x input
  Vector b1;
  Matrix w2;  // hidden x hidden
  Vector b2;
  Matrix w_mu;     // 2K x hidden
  Vector b_mu;
  Matrix w_sigma;  // 2K x hidden
  Vector b_sigma;
  Matrix w_pi;     // K x hidden
  Vector b_pi;
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
EncoderWeights init_weights(std::uint64_t seed, const EncoderConfig& config);

// pooled.data is consumed in FeatureGrid layout (C, then rows, then
// columns). Activations: mu = tanh, sigma = softplus + floor,
// pi = sigmoid, so any finite input yields a valid QualityGMM.
QualityGMM encode(const EncoderWeights& weights, const PooledFeature& pooled,
                  const EncoderConfig& config);

// Upstream loss gradients w.r.t. the activated GMM parameters.
struct GmmGrad {
  MatrixK2 mu;
  MatrixK2 sigma;
  Vector pi;

  static GmmGrad zero(int k) {
    return {MatrixK2::Zero(k, 2), MatrixK2::Zero(k, 2), Vector::Zero(k)};
  }
  void accumulate(const GmmGrad& other) {
    mu += other.mu;
    sigma += other.sigma;
    pi += other.pi;
  }
};

struct EncoderGrad {
  EncoderWeights weights;  // same shapes, holding d(loss)/d(parameter)
  Array input;             // d(loss)/d(pooled feature), FeatureGrid layout
};

EncoderGrad encode_grad(const EncoderWeights& weights,
                        const PooledFeature& pooled, const GmmGrad& upstream,
                        const EncoderConfig& config);

}  // namespace iqdet
