#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "iqdet/qdist.hpp"
#include "testutil.hpp"

using namespace iqdet;
using testutil::check_grad;

namespace {

QualityGMM random_gmm(Rng& rng, int k) {
  QualityGMM g;
  g.mu = MatrixK2::Zero(k, 2);
  g.sigma = MatrixK2::Zero(k, 2);
  g.pi = Vector::Zero(k);
  for (int i = 0; i < k; ++i) {
    for (int a = 0; a < 2; ++a) {
      g.mu(i, a) = rng.uniform(-0.9, 0.9);
      g.sigma(i, a) = rng.uniform(0.05, 1.5);
    }
    g.pi[i] = rng.uniform(0.05, 1.0);
  }
  return g;
}

Scalar normal_cdf(Scalar z) { return 0.5 * (1 + std::erf(z / std::sqrt(Scalar(2)))); }

// Mass of TruncNormal(mu, sigma; (-1,1)) on [a, b].
Scalar trunc_axis_mass(Scalar mu, Scalar sigma, Scalar a, Scalar b) {
  const Scalar lo = normal_cdf((-1 - mu) / sigma);
  const Scalar hi = normal_cdf((1 - mu) / sigma);
  return (normal_cdf((b - mu) / sigma) - normal_cdf((a - mu) / sigma)) / (hi - lo);
}

// Exact bin probability of the truncated ancestral sampler via erf.
Scalar bin_probability(const QualityGMM& g, Scalar ax, Scalar bx, Scalar ay,
                       Scalar by) {
  const Scalar pi_total = g.pi.sum();
  Scalar p = 0;
  for (int k = 0; k < g.components(); ++k) {
    p += g.pi[k] / pi_total * trunc_axis_mass(g.mu(k, 0), g.sigma(k, 0), ax, bx) *
         trunc_axis_mass(g.mu(k, 1), g.sigma(k, 1), ay, by);
  }
  return p;
}

}  // namespace

TEST_CASE("component value is exactly one at its mean") {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const QualityGMM g = random_gmm(rng, 1 + rng.uniform_int(3));
    for (int k = 0; k < g.components(); ++k) {
      CHECK(component_value(g, k, {g.mu(k, 0), g.mu(k, 1)}) == 1.0);
    }
  }
}

TEST_CASE("baseline component at unit distance is exp(-1/2)") {
  const QualityGMM g = fixed_gmm(1.0);
  CHECK(std::abs(component_value(g, 0, {1.0, 0.0}) - 0.6065306597126334) <= 1e-12);
  CHECK(std::abs(component_value(g, 0, {0.0, -1.0}) - 0.6065306597126334) <= 1e-12);
}

TEST_CASE("baseline density at the corner offset is exp(-1)") {
  const QualityGMM g = fixed_gmm(1.0);
  CHECK(std::abs(density(g, {1.0, 1.0}) - 0.36787944117144233) <= 1e-12);
  CHECK(density(g, {0.0, 0.0}) == 1.0);
}

TEST_CASE("floored sigma collapses the component onto its mean") {
  QualityGMM g = fixed_gmm(kSigmaFloor);
  CHECK(density(g, {0.0, 0.0}) == 1.0);
  CHECK(density(g, {0.5, 0.0}) < 1e-100);
}

TEST_CASE("density is linear in pi and invariant to component order") {
  Rng rng(32);
  QualityGMM one = fixed_gmm(0.7);
  QualityGMM split;
  split.mu = MatrixK2::Zero(2, 2);
  split.sigma = MatrixK2::Constant(2, 2, 0.7);
  split.pi = Vector::Constant(2, 0.5);
  for (int t = 0; t < 50; ++t) {
    const NormalizedOffset d{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    CHECK(density(split, d) == doctest::Approx(density(one, d)).epsilon(1e-15));
  }

  const QualityGMM g = random_gmm(rng, 3);
  QualityGMM perm;
  const int order[3] = {2, 0, 1};
  perm.mu = MatrixK2::Zero(3, 2);
  perm.sigma = MatrixK2::Zero(3, 2);
  perm.pi = Vector::Zero(3);
  for (int i = 0; i < 3; ++i) {
    perm.mu.row(i) = g.mu.row(order[i]);
    perm.sigma.row(i) = g.sigma.row(order[i]);
    perm.pi[i] = g.pi[order[i]];
  }
  for (int t = 0; t < 50; ++t) {
    const NormalizedOffset d{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    CHECK(std::abs(density(perm, d) - density(g, d)) <= 1e-12);
  }
}

TEST_CASE("quality target clamps the density at one") {
  // Single component, pi = 0.4: target equals density at the peak.
  QualityGMM g = fixed_gmm(0.8);
  g.pi[0] = 0.4;
  CHECK(quality_target(g, {0.0, 0.0}) == 0.4);

  // Two stacked peaks push the density above one; the target saturates.
  QualityGMM two;
  two.mu = MatrixK2::Zero(2, 2);
  two.sigma = MatrixK2::Constant(2, 2, 0.8);
  two.pi = Vector::Constant(2, 0.9);
  CHECK(density(two, {0.0, 0.0}) == doctest::Approx(1.8).epsilon(1e-15));
  CHECK(quality_target(two, {0.0, 0.0}) == 1.0);

  CHECK(std::abs(quality_target(fixed_gmm(1.0), {1.0, 1.0}) - 0.36787944117144233) <= 1e-12);
}

TEST_CASE("gmm validation rejects out-of-range parameters") {
  QualityGMM g = fixed_gmm(1.0);
  CHECK_NOTHROW(validate(g));
  g.mu(0, 0) = 1.5;
  CHECK_THROWS_AS(validate(g), std::domain_error);
  g = fixed_gmm(1.0);
  g.sigma(0, 1) = 0.5 * kSigmaFloor;
  CHECK_THROWS_AS(validate(g), std::domain_error);
  g = fixed_gmm(1.0);
  g.pi[0] = 0.0;
  CHECK_THROWS_AS(validate(g), std::domain_error);
  g = fixed_gmm(1.0);
  g.pi[0] = 1.25;
  CHECK_THROWS_AS(validate(g), std::domain_error);
  QualityGMM empty;
  empty.mu = MatrixK2::Zero(0, 2);
  empty.sigma = MatrixK2::Zero(0, 2);
  empty.pi = Vector::Zero(0);
  CHECK_THROWS_AS(validate(empty), std::domain_error);
}

TEST_CASE("density gradient in pi equals the component value") {
  Rng rng(33);
  const QualityGMM g = random_gmm(rng, 3);
  const NormalizedOffset d{0.2, -0.4};
  const DensityGrad grad = density_grad(g, d);
  for (int k = 0; k < 3; ++k) CHECK(grad.pi[k] == component_value(g, k, d));
}

TEST_CASE("density gradient in mu vanishes at the component mean") {
  const QualityGMM g = fixed_gmm(0.9);
  const DensityGrad grad = density_grad(g, {0.0, 0.0});
  CHECK(grad.mu(0, 0) == 0.0);
  CHECK(grad.mu(0, 1) == 0.0);
}

TEST_CASE("density gradients match central differences") {
  Rng rng(34);
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + rng.uniform_int(3);
    const QualityGMM g = random_gmm(rng, k);
    const NormalizedOffset d{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const DensityGrad grad = density_grad(g, d);

    for (int i = 0; i < k; ++i) {
      for (int a = 0; a < 2; ++a) {
        check_grad(grad.mu(i, a), testutil::central_diff(
                                      [&](Scalar v) {
                                        QualityGMM p = g;
                                        p.mu(i, a) = v;
                                        return density(p, d);
                                      },
                                      g.mu(i, a)));
        check_grad(grad.sigma(i, a), testutil::central_diff(
                                         [&](Scalar v) {
                                           QualityGMM p = g;
                                           p.sigma(i, a) = v;
                                           return density(p, d);
                                         },
                                         g.sigma(i, a)));
      }
      check_grad(grad.pi[i], testutil::central_diff(
                                 [&](Scalar v) {
                                   QualityGMM p = g;
                                   p.pi[i] = v;
                                   return density(p, d);
                                 },
                                 g.pi[i]));
    }
    check_grad(grad.offset[0], testutil::central_diff(
                                   [&](Scalar v) { return density(g, {v, d.dy}); }, d.dx));
    check_grad(grad.offset[1], testutil::central_diff(
                                   [&](Scalar v) { return density(g, {d.dx, v}); }, d.dy));
  }
}

TEST_CASE("quality target gradient is zero once the clamp engages") {
  QualityGMM two;
  two.mu = MatrixK2::Zero(2, 2);
  two.sigma = MatrixK2::Constant(2, 2, 0.8);
  two.pi = Vector::Constant(2, 0.9);
  const DensityGrad g = quality_target_grad(two, {0.05, -0.05});
  CHECK(g.mu.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.sigma.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.pi.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.offset.cwiseAbs().maxCoeff() == 0.0);

  // Below the clamp it is the plain density gradient.
  QualityGMM soft = fixed_gmm(0.8);
  soft.pi[0] = 0.6;
  const NormalizedOffset d{0.3, 0.1};
  const DensityGrad a = quality_target_grad(soft, d);
  const DensityGrad b = density_grad(soft, d);
  CHECK(a.mu == b.mu);
  CHECK(a.sigma == b.sigma);
  CHECK(a.pi == b.pi);
}

TEST_CASE("sampling is deterministic given the generator state") {
  const QualityGMM g = fixed_gmm(1.0);
  Rng a(99), b(99);
  const auto sa = sample_offsets(g, 50, a);
  const auto sb = sample_offsets(g, 50, b);
  REQUIRE(sa.size() == 50);
  for (int i = 0; i < 50; ++i) {
    CHECK(sa[i].offset.dx == sb[i].offset.dx);
    CHECK(sa[i].offset.dy == sb[i].offset.dy);
    CHECK(sa[i].quality == sb[i].quality);
  }
}

TEST_CASE("samples stay inside the open unit square and carry their quality") {
  Rng rng(35);
  const QualityGMM g = random_gmm(rng, 2);
  const auto samples = sample_offsets(g, 2000, rng);
  for (const OffsetSample& s : samples) {
    CHECK(s.offset.dx > -1.0);
    CHECK(s.offset.dx < 1.0);
    CHECK(s.offset.dy > -1.0);
    CHECK(s.offset.dy < 1.0);
    CHECK(s.quality == quality_target(g, s.offset));
  }
}

TEST_CASE("near-floor sigma concentrates draws onto the mean") {
  QualityGMM g = fixed_gmm(kSigmaFloor);
  g.mu(0, 0) = 0.25;
  g.mu(0, 1) = -0.5;
  Rng rng(36);
  const auto samples = sample_offsets(g, 10000, rng);
  for (const OffsetSample& s : samples) {
    CHECK(std::abs(s.offset.dx - 0.25) < 0.01);
    CHECK(std::abs(s.offset.dy + 0.5) < 0.01);
  }
}

TEST_CASE("sample count must be positive") {
  Rng rng(37);
  CHECK_THROWS_AS(sample_offsets(fixed_gmm(1.0), 0, rng), std::domain_error);
}

TEST_CASE("component choice follows the pi proportions") {
  QualityGMM g;
  g.mu = MatrixK2::Zero(2, 2);
  g.mu(0, 0) = -0.6;
  g.mu(1, 0) = 0.6;
  g.sigma = MatrixK2::Constant(2, 2, 0.05);
  g.pi = Vector::Zero(2);
  g.pi[0] = 0.2;
  g.pi[1] = 0.8;
  Rng rng(38);
  const auto samples = sample_offsets(g, 100000, rng);
  int left = 0;
  for (const OffsetSample& s : samples) {
    if (s.offset.dx < 0) ++left;
  }
  CHECK(std::abs(left / 100000.0 - 0.2) < 0.01);
}

TEST_CASE("empirical histogram matches the truncated mixture quadrature") {
  const QualityGMM g = fixed_gmm(1.0);
  Rng rng(39);
  const int n = 1000000;
  const auto samples = sample_offsets(g, n, rng);

  const int bins = 20;
  std::vector<Scalar> hist(bins * bins, 0);
  Scalar mean_x = 0, mean_y = 0;
  for (const OffsetSample& s : samples) {
    const int bx = std::min(static_cast<int>((s.offset.dx + 1) / 2 * bins), bins - 1);
    const int by = std::min(static_cast<int>((s.offset.dy + 1) / 2 * bins), bins - 1);
    hist[by * bins + bx] += 1;
    mean_x += s.offset.dx;
    mean_y += s.offset.dy;
  }
  mean_x /= n;
  mean_y /= n;
  CHECK(std::abs(mean_x) < 0.02);
  CHECK(std::abs(mean_y) < 0.02);

  Scalar tv = 0;
  for (int by = 0; by < bins; ++by) {
    for (int bx = 0; bx < bins; ++bx) {
      const Scalar ax = -1 + 2.0 * bx / bins, bxn = -1 + 2.0 * (bx + 1) / bins;
      const Scalar ay = -1 + 2.0 * by / bins, byn = -1 + 2.0 * (by + 1) / bins;
      tv += std::abs(hist[by * bins + bx] / n - bin_probability(g, ax, bxn, ay, byn));
    }
  }
  tv *= 0.5;
  CHECK(tv < 0.02);
}
