// Copyright (c) 2026 the vidlora authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "vidlora/common.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace vidlora {

// splitmix64; used to derive independent child seeds from one master seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic noise source. mt19937_64 output is fixed by the standard, and the
// Gaussian transform is our own Box-Muller, so streams replay identically across runs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed), seed0_(seed) {}

  Rng child(uint64_t stream) const { return Rng(mix_seed(seed0_, stream)); }

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // uniform integer in [lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi) {
    VL_CHECK(hi >= lo, "uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(gen_() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename S>
  void normal_fill(ArrX<S>& out, double stddev = 1.0, double mean = 0.0) {
    for (Index i = 0; i < out.size(); ++i)
      out[i] = static_cast<S>(mean + stddev * normal());
  }

  template <typename S>
  void uniform_fill(ArrX<S>& out, double lo, double hi) {
    for (Index i = 0; i < out.size(); ++i)
      out[i] = static_cast<S>(lo + (hi - lo) * uniform());
  }

 private:
  std::mt19937_64 gen_;
  uint64_t seed0_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace vidlora
