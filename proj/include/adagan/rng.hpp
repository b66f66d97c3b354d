#pragma once

// Deterministic counter-style RNG. The integer stream is SplitMix64
// (Steele et al.), so identical seeds give identical draws on every
// platform; float transforms go through libm and are exact per toolchain.

#include <cmath>
#include <cstdint>
#include <vector>

#include "adagan/tensor.hpp"

namespace adagan {

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe as a log argument.
  double next_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Unbiased integer in [0, n) by rejection.
  uint64_t next_below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // One Box-Muller pair of independent standard normals.
  void next_gaussian_pair(double* z0, double* z1) {
    const double u1 = next_open();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    *z0 = r * std::cos(theta);
    *z1 = r * std::sin(theta);
  }

  // Derive an independent stream; used to keep model init, latent
  // sampling, and data shuffling on separate counters.
  Rng split(uint64_t stream) const {
    uint64_t s = seed_ ^ (0xD1B54A32D192ED03ull * (stream + 1));
    s = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9ull;
    s = (s ^ (s >> 27)) * 0x94D049BB133111EBull;
    return Rng(s ^ (s >> 31));
  }

 private:
  uint64_t seed_;
  uint64_t state_;
};

// i.i.d. standard normal entries via Box-Muller over the deterministic stream.
inline Tensor sample_gaussian(Rng& rng, Shape shape) {
  Tensor t = Tensor::uninit(std::move(shape));
  const int64_t n = t.size();
  float* out = t.data();
  for (int64_t i = 0; i < n; i += 2) {
    double z0, z1;
    rng.next_gaussian_pair(&z0, &z1);
    out[i] = static_cast<float>(z0);
    if (i + 1 < n) out[i + 1] = static_cast<float>(z1);
  }
  return t;
}

// Normal(0, stddev) truncated to |x| <= 2*stddev by rejection resampling.
inline Tensor init_truncated_normal(Rng& rng, Shape shape, float stddev = 0.02f) {
  if (!(stddev > 0)) throw ContractError("truncated normal requires stddev > 0");
  Tensor t = Tensor::uninit(std::move(shape));
  const int64_t n = t.size();
  float* out = t.data();
  int64_t i = 0;
  while (i < n) {
    double z0, z1;
    rng.next_gaussian_pair(&z0, &z1);
    if (std::abs(z0) <= 2.0) out[i++] = static_cast<float>(z0 * stddev);
    if (i < n && std::abs(z1) <= 2.0) out[i++] = static_cast<float>(z1 * stddev);
  }
  return t;
}

// Fisher-Yates over the deterministic stream.
template <typename T>
inline void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace adagan
