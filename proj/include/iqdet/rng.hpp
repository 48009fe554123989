#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "iqdet/types.hpp"

namespace iqdet {

// Deterministic random source. std::mt19937_64 has a standard-mandated
// output sequence, and all variates below are derived from its raw words
// with explicit arithmetic, so streams are reproducible bit-for-bit for a
// given seed (the distribution adaptors in <random> carry no such
// guarantee across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  Scalar uniform() {
    return static_cast<Scalar>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1]; safe as a log() argument.
  Scalar uniform_pos() {
    return (static_cast<Scalar>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  }

  Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the Box-Muller cosine branch. Two raw words per
  // variate; the sine mate is discarded to keep the stream stateless.
  Scalar normal() {
    const Scalar u1 = uniform_pos();
    const Scalar u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    const int v = static_cast<int>(uniform() * static_cast<Scalar>(n));
    return v < n ? v : n - 1;
  }

  // Splits off an independent stream; mixing constants from splitmix64.
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace iqdet
