#pragma once

#include <vector>

#include "iqdet/geometry.hpp"
#include "iqdet/rng.hpp"
#include "iqdet/types.hpp"

namespace iqdet {

// Per-instance, per-level quality mixture over normalized in-box offsets.
// Components are axis-separable unnormalized Gaussians, so the surface
// peaks at 1 per component and the mixture is NOT a probability density:
// it is a quality field in (0, sum(pi)].
struct QualityGMM {
  MatrixK2 mu;     // K x 2, each in [-1, 1]
  MatrixK2 sigma;  // K x 2, each >= kSigmaFloor
  Vector pi;       // K, each in (0, 1]

  int components() const { return static_cast<int>(pi.size()); }
};

// The fixed-parameter baseline (mu=0, sigma=s, pi=1) with a single
// component; sigma=1 reproduces the learnability-ablation reference,
// sigma=0.5 the center-sampling mode.
QualityGMM fixed_gmm(Scalar sigma_value = 1.0);

// Throws std::domain_error on invariant violations.
void validate(const QualityGMM& gmm);

// exp(-(d-mu_k)^2 / (2 sigma_k^2)), product over the two axes. Equals 1
// exactly at d = mu_k.
Scalar component_value(const QualityGMM& gmm, int k, const NormalizedOffset& d);

// Unnormalized quality surface: sum_k pi_k * component_value(k, d).
Scalar density(const QualityGMM& gmm, const NormalizedOffset& d);

// density clamped to [0, 1] so it can serve as a BCE target / soft label.
Scalar quality_target(const QualityGMM& gmm, const NormalizedOffset& d);

struct DensityGrad {
  MatrixK2 mu;     // d(density)/d(mu)
  MatrixK2 sigma;  // d(density)/d(sigma)
  Vector pi;       // d(density)/d(pi)
  Eigen::Matrix<Scalar, 2, 1> offset;  // d(density)/d(dx, dy)
};

DensityGrad density_grad(const QualityGMM& gmm, const NormalizedOffset& d);

// Subgradient of quality_target: zero everywhere once the clamp engages.
DensityGrad quality_target_grad(const QualityGMM& gmm, const NormalizedOffset& d);

struct OffsetSample {
  NormalizedOffset offset;
  Scalar quality = 0;  // quality_target at the offset
};

// count i.i.d. draws from the mixture truncated to the open square
// (-1,1)^2: pick a component with probability pi_k / sum(pi), then draw
// each axis by rejection inside (-1,1), clamping into
// [-1+1e-6, 1-1e-6] after 100 rejections. Deterministic given the Rng
// state.
std::vector<OffsetSample> sample_offsets(const QualityGMM& gmm, int count,
                                         Rng& rng);

}  // namespace iqdet
