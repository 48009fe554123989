#include "iqdet/qde.hpp"

#include <cmath>
#include <stdexcept>

#include "iqdet/rng.hpp"

namespace iqdet {

namespace {

Scalar softplus(Scalar z) {
  return std::max(z, Scalar(0)) + std::log1p(std::exp(-std::abs(z)));
}

Scalar sigmoid(Scalar z) {
  if (z >= 0) return 1 / (1 + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (1 + e);
}

Matrix glorot(int rows, int cols, Rng& rng) {
  const Scalar a = std::sqrt(Scalar(6) / (rows + cols));
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-a, a);
  }
  return m;
}

struct ForwardCache {
  Vector x, pre1, h1, pre2, h2;
  Vector raw_mu, raw_sigma, raw_pi;
  QualityGMM gmm;
};

Vector flatten_input(const PooledFeature& pooled, const EncoderConfig& config) {
  const int pp = pooled.pool * pooled.pool;
  if (pooled.channels != config.channels || pooled.pool != config.pool) {
    throw std::domain_error("pooled feature shape does not match encoder config");
  }
  if (!pooled.data.allFinite()) {
    throw std::domain_error("pooled feature has non-finite values");
  }
  if (config.global_pool) {
    Vector x(config.channels);
    for (int c = 0; c < config.channels; ++c) {
      x[c] = pooled.data.segment(static_cast<Eigen::Index>(c) * pp, pp).mean();
    }
    return x;
  }
  return pooled.data.matrix();
}

ForwardCache forward(const EncoderWeights& w, const PooledFeature& pooled,
                     const EncoderConfig& config) {
  ForwardCache f;
  f.x = flatten_input(pooled, config);
  if (w.w1.cols() != f.x.size()) {
    throw std::domain_error("encoder input width does not match weights");
  }
  f.pre1 = w.w1 * f.x + w.b1;
  f.h1 = f.pre1.cwiseMax(Scalar(0));
  f.pre2 = w.w2 * f.h1 + w.b2;
  f.h2 = f.pre2.cwiseMax(Scalar(0));
  f.raw_mu = w.w_mu * f.h2 + w.b_mu;
  f.raw_sigma = w.w_sigma * f.h2 + w.b_sigma;
  f.raw_pi = w.w_pi * f.h2 + w.b_pi;

  const int k = config.k_components;
  f.gmm.mu = MatrixK2(k, 2);
  f.gmm.sigma = MatrixK2(k, 2);
  f.gmm.pi = Vector(k);
  for (int i = 0; i < k; ++i) {
    for (int axis = 0; axis < 2; ++axis) {
      f.gmm.mu(i, axis) = config.learn_mu ? std::tanh(f.raw_mu[2 * i + axis])
                                          : config.fixed_mu;
      f.gmm.sigma(i, axis) =
          config.learn_sigma ? softplus(f.raw_sigma[2 * i + axis]) + kSigmaFloor
                             : config.fixed_sigma;
    }
    // The sigmoid underflows to exactly 0 for very negative logits; the
    // floor keeps the mixture weight in (0, 1] for every finite input.
    f.gmm.pi[i] = config.learn_pi ? std::max(sigmoid(f.raw_pi[i]), kPiFloor)
                                  : config.fixed_pi;
  }
  return f;
}

}  // namespace

EncoderWeights init_weights(std::uint64_t seed, const EncoderConfig& config) {
  Rng rng(seed);
  const int in = config.input_dim();
  const int h = config.hidden;
  const int k = config.k_components;
  EncoderWeights w;
  w.w1 = glorot(h, in, rng);
  w.b1 = Vector::Zero(h);
  w.w2 = glorot(h, h, rng);
  w.b2 = Vector::Zero(h);
  w.w_mu = glorot(2 * k, h, rng);
  w.b_mu = Vector::Zero(2 * k);
  w.w_sigma = glorot(2 * k, h, rng);
  w.b_sigma = Vector::Zero(2 * k);
  w.w_pi = glorot(k, h, rng);
  w.b_pi = Vector::Zero(k);
  return w;
}

QualityGMM encode(const EncoderWeights& weights, const PooledFeature& pooled,
                  const EncoderConfig& config) {
  return forward(weights, pooled, config).gmm;
}

EncoderGrad encode_grad(const EncoderWeights& weights,
                        const PooledFeature& pooled, const GmmGrad& upstream,
                        const EncoderConfig& config) {
  const ForwardCache f = forward(weights, pooled, config);
  const int k = config.k_components;

  Vector d_raw_mu = Vector::Zero(2 * k);
  Vector d_raw_sigma = Vector::Zero(2 * k);
  Vector d_raw_pi = Vector::Zero(k);
  for (int i = 0; i < k; ++i) {
    for (int axis = 0; axis < 2; ++axis) {
      if (config.learn_mu) {
        const Scalar m = f.gmm.mu(i, axis);
        d_raw_mu[2 * i + axis] = upstream.mu(i, axis) * (1 - m * m);
      }
      if (config.learn_sigma) {
        d_raw_sigma[2 * i + axis] =
            upstream.sigma(i, axis) * sigmoid(f.raw_sigma[2 * i + axis]);
      }
    }
    if (config.learn_pi) {
      const Scalar p = f.gmm.pi[i];
      d_raw_pi[i] = p <= kPiFloor ? 0.0 : upstream.pi[i] * p * (1 - p);
    }
  }

  EncoderGrad g;
  g.weights.w_mu = d_raw_mu * f.h2.transpose();
  g.weights.b_mu = d_raw_mu;
  g.weights.w_sigma = d_raw_sigma * f.h2.transpose();
  g.weights.b_sigma = d_raw_sigma;
  g.weights.w_pi = d_raw_pi * f.h2.transpose();
  g.weights.b_pi = d_raw_pi;

  Vector d_h2 = weights.w_mu.transpose() * d_raw_mu +
                weights.w_sigma.transpose() * d_raw_sigma +
                weights.w_pi.transpose() * d_raw_pi;
  const Vector d_pre2 =
      (f.pre2.array() > 0).select(d_h2.array(), Scalar(0)).matrix();
  g.weights.w2 = d_pre2 * f.h1.transpose();
  g.weights.b2 = d_pre2;

  Vector d_h1 = weights.w2.transpose() * d_pre2;
  const Vector d_pre1 =
      (f.pre1.array() > 0).select(d_h1.array(), Scalar(0)).matrix();
  g.weights.w1 = d_pre1 * f.x.transpose();
  g.weights.b1 = d_pre1;

  const Vector d_x = weights.w1.transpose() * d_pre1;
  const int pp = config.pool * config.pool;
  if (config.global_pool) {
    g.input = Array::Zero(static_cast<Eigen::Index>(config.channels) * pp);
    for (int c = 0; c < config.channels; ++c) {
      g.input.segment(static_cast<Eigen::Index>(c) * pp, pp) = d_x[c] / pp;
    }
  } else {
    g.input = d_x.array();
  }
  return g;
}

}  // namespace iqdet
