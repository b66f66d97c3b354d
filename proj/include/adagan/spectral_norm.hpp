#pragma once

// Spectral normalization: divide a weight by its largest singular value,
// estimated by power iteration with a persistent vector. The estimate is
// treated as a constant in backward (stop-gradient), matching the usual
// practice for SN discriminators.

#include <cmath>

#include "adagan/ops.hpp"
#include "adagan/rng.hpp"

namespace adagan {

struct SpectralNormState {
  Tensor u;  // persistent singular-vector estimate, unit norm, dim = out features
  int n_power_iterations = 1;
  float last_sigma = 0.0f;
  bool degenerate = false;  // sigma hit the clamp this step

  static SpectralNormState init(int64_t out_features, Rng& rng) {
    SpectralNormState s;
    s.u = sample_gaussian(rng, {out_features});
    double norm = 0.0;
    for (int64_t i = 0; i < s.u.size(); ++i) norm += static_cast<double>(s.u[i]) * s.u[i];
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (int64_t i = 0; i < s.u.size(); ++i) s.u[i] = static_cast<float>(s.u[i] / norm);
    return s;
  }
};

namespace detail {

constexpr float kSigmaFloor = 1e-12f;

inline double vec_norm(const float* p, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(p[i]) * p[i];
  return std::sqrt(s);
}

// One power-iteration sweep on A viewed as [rows x cols], updating u
// (dim cols) in place. Returns sigma = v^T A u.
inline float power_iterate(const float* a, int64_t rows, int64_t cols, Tensor& u, int iters) {
  Tensor v = Tensor::uninit({rows});
  Tensor au = Tensor::uninit({cols});
  float sigma = 0.0f;
  for (int it = 0; it < iters; ++it) {
    // v = normalize(A u)
    for (int64_t r = 0; r < rows; ++r) {
      const float* row = a + r * cols;
      double s = 0.0;
      for (int64_t c = 0; c < cols; ++c) s += static_cast<double>(row[c]) * u[c];
      v[r] = static_cast<float>(s);
    }
    double nv = vec_norm(v.data(), rows);
    if (nv < 1e-20) return 0.0f;
    for (int64_t r = 0; r < rows; ++r) v[r] = static_cast<float>(v[r] / nv);
    // u = normalize(A^T v)
    for (int64_t c = 0; c < cols; ++c) au[c] = 0.0f;
    for (int64_t r = 0; r < rows; ++r) {
      const float* row = a + r * cols;
      const float vr = v[r];
      for (int64_t c = 0; c < cols; ++c) au[c] += vr * row[c];
    }
    double nu = vec_norm(au.data(), cols);
    if (nu < 1e-20) return 0.0f;
    for (int64_t c = 0; c < cols; ++c) u[c] = static_cast<float>(au[c] / nu);
    // sigma = v^T A u = ||A^T v|| after the u update
    sigma = static_cast<float>(nu);
  }
  return sigma;
}

// Sigma estimate from the stored u without touching it: ||A u||.
inline float sigma_from_u(const float* a, int64_t rows, int64_t cols, const Tensor& u) {
  double s2 = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = a + r * cols;
    double s = 0.0;
    for (int64_t c = 0; c < cols; ++c) s += static_cast<double>(row[c]) * u[c];
    s2 += s * s;
  }
  return static_cast<float>(std::sqrt(s2));
}

}  // namespace detail

// Largest-singular-value estimate of w viewed as [size/out, out]; updates u.
inline float spectral_sigma(const Tensor& w, Tensor& u, int iters) {
  const int64_t cols = u.size();
  const int64_t rows = w.size() / cols;
  return detail::power_iterate(w.data(), rows, cols, u, iters);
}

namespace ops {

// Returns w / sigma. With update=true (training) one configurable power
// iteration refreshes state.u; with update=false the stored estimate is
// used read-only. A zero weight clamps sigma and sets state.degenerate so
// the caller can flag it in its logs.
inline Var spectral_normalize(Tape& tape, Var w, SpectralNormState& state, bool update = true) {
  const Tensor& wv = tape.value(w);
  const int64_t cols = state.u.size();
  if (cols < 1 || wv.size() % cols != 0) {
    throw ShapeError("spectral_normalize: u dim " + std::to_string(cols) +
                     " does not divide weight " + shape_str(wv.shape()));
  }
  const int64_t rows = wv.size() / cols;
  float sigma = update ? detail::power_iterate(wv.data(), rows, cols, state.u,
                                               state.n_power_iterations)
                       : detail::sigma_from_u(wv.data(), rows, cols, state.u);
  state.degenerate = !(sigma > detail::kSigmaFloor);
  if (state.degenerate) sigma = detail::kSigmaFloor;
  state.last_sigma = sigma;

  const float inv = 1.0f / sigma;
  Tensor out = Tensor::uninit(wv.shape());
  for (int64_t i = 0; i < wv.size(); ++i) out[i] = wv[i] * inv;
  return tape.record_op(std::move(out), [w, inv](Var out_var) {
    return [w, inv, out_var](Tape& t) {
      const Tensor& g = t.grad(out_var);
      Tensor gw = Tensor::uninit(g.shape());
      for (int64_t i = 0; i < g.size(); ++i) gw[i] = g[i] * inv;
      t.add_grad(w, std::move(gw));
    };
  });
}

}  // namespace ops
}  // namespace adagan
