#include "iqdet/qdist.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace iqdet {

QualityGMM fixed_gmm(Scalar sigma_value) {
  QualityGMM g;
  g.mu = MatrixK2::Zero(1, 2);
  g.sigma = MatrixK2::Constant(1, 2, sigma_value);
  g.pi = Vector::Ones(1);
  return g;
}

void validate(const QualityGMM& gmm) {
  const int k = gmm.components();
  if (k < 1) throw std::domain_error("gmm needs at least one component");
  if (gmm.mu.rows() != k || gmm.sigma.rows() != k) {
    throw std::domain_error("gmm parameter shapes disagree");
  }
  if (!gmm.mu.allFinite() || !gmm.sigma.allFinite() || !gmm.pi.allFinite()) {
    throw std::domain_error("gmm has non-finite parameters");
  }
  if ((gmm.mu.array().abs() > 1).any()) {
    throw std::domain_error("gmm mu outside [-1, 1]");
  }
  if ((gmm.sigma.array() < kSigmaFloor).any()) {
    throw std::domain_error("gmm sigma below floor");
  }
  if ((gmm.pi.array() <= 0).any() || (gmm.pi.array() > 1).any()) {
    throw std::domain_error("gmm pi outside (0, 1]");
  }
}

Scalar component_value(const QualityGMM& gmm, int k, const NormalizedOffset& d) {
  const Scalar zx = (d.dx - gmm.mu(k, 0)) / gmm.sigma(k, 0);
  const Scalar zy = (d.dy - gmm.mu(k, 1)) / gmm.sigma(k, 1);
  return std::exp(-0.5 * (zx * zx + zy * zy));
}

Scalar density(const QualityGMM& gmm, const NormalizedOffset& d) {
  Scalar p = 0;
  for (int k = 0; k < gmm.components(); ++k) {
    p += gmm.pi[k] * component_value(gmm, k, d);
  }
  return p;
}

Scalar quality_target(const QualityGMM& gmm, const NormalizedOffset& d) {
  return std::min(density(gmm, d), Scalar(1));
}

DensityGrad density_grad(const QualityGMM& gmm, const NormalizedOffset& d) {
  const int n = gmm.components();
  DensityGrad g;
  g.mu = MatrixK2::Zero(n, 2);
  g.sigma = MatrixK2::Zero(n, 2);
  g.pi = Vector::Zero(n);
  g.offset.setZero();
  for (int k = 0; k < n; ++k) {
    const Scalar phi = component_value(gmm, k, d);
    g.pi[k] = phi;
    const Scalar coeff = gmm.pi[k] * phi;
    const Scalar rx = (d.dx - gmm.mu(k, 0)) / (gmm.sigma(k, 0) * gmm.sigma(k, 0));
    const Scalar ry = (d.dy - gmm.mu(k, 1)) / (gmm.sigma(k, 1) * gmm.sigma(k, 1));
    g.mu(k, 0) = coeff * rx;
    g.mu(k, 1) = coeff * ry;
    g.sigma(k, 0) = coeff * rx * (d.dx - gmm.mu(k, 0)) / gmm.sigma(k, 0);
    g.sigma(k, 1) = coeff * ry * (d.dy - gmm.mu(k, 1)) / gmm.sigma(k, 1);
    g.offset[0] -= coeff * rx;
    g.offset[1] -= coeff * ry;
  }
  return g;
}

DensityGrad quality_target_grad(const QualityGMM& gmm, const NormalizedOffset& d) {
  if (density(gmm, d) >= 1) {
    DensityGrad g;
    g.mu = MatrixK2::Zero(gmm.components(), 2);
    g.sigma = MatrixK2::Zero(gmm.components(), 2);
    g.pi = Vector::Zero(gmm.components());
    g.offset.setZero();
    return g;
  }
  return density_grad(gmm, d);
}

namespace {

Scalar truncated_axis_draw(Scalar mu, Scalar sigma, Rng& rng) {
  constexpr int kMaxRejections = 100;
  constexpr Scalar kEps = 1e-6;
  Scalar v = 0;
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    v = mu + sigma * rng.normal();
    if (v > -1 && v < 1) return v;
  }
  return std::clamp(v, Scalar(-1 + kEps), Scalar(1 - kEps));
}

}  // namespace

std::vector<OffsetSample> sample_offsets(const QualityGMM& gmm, int count,
                                         Rng& rng) {
  validate(gmm);
  if (count < 1) throw std::domain_error("sample count must be >= 1");

  const Scalar pi_total = gmm.pi.sum();
  std::vector<OffsetSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    // Ancestral component pick, proportional to pi.
    const Scalar u = rng.uniform() * pi_total;
    int k = 0;
    Scalar acc = gmm.pi[0];
    while (k + 1 < gmm.components() && u >= acc) acc += gmm.pi[++k];

    OffsetSample s;
    s.offset.dx = truncated_axis_draw(gmm.mu(k, 0), gmm.sigma(k, 0), rng);
    s.offset.dy = truncated_axis_draw(gmm.mu(k, 1), gmm.sigma(k, 1), rng);
    s.quality = quality_target(gmm, s.offset);
    out.push_back(s);
  }
  return out;
}

}  // namespace iqdet
