#pragma once

// Test-only oracles, independent of the library's compute paths:
// central finite differences, per-output-pixel brute-force convolutions,
// a triple-loop local convolution, and dense SVD via LAPACKE.

#include <lapacke.h>

#include <cmath>
#include <functional>
#include <vector>

#include "adagan/rng.hpp"
#include "adagan/tensor.hpp"

namespace oracles {

using adagan::Rng;
using adagan::Shape;
using adagan::Tensor;

inline Tensor random_tensor(Rng& rng, Shape shape, float scale = 1.0f) {
  Tensor t = adagan::sample_gaussian(rng, std::move(shape));
  if (scale != 1.0f) {
    for (int64_t i = 0; i < t.size(); ++i) t[i] *= scale;
  }
  return t;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  float worst = 0.0f;
  for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Central finite differences on randomly probed elements of each input.
// loss_fn must recompute the loss from the current contents of `inputs`.
// Errors are measured against the larger of the probed element and the
// gradient's RMS scale: float32 forward rounding puts an eps32/eps noise
// floor on every probe, so tiny elements cannot carry a per-element
// relative tolerance on their own.
inline double max_rel_grad_err(const std::vector<Tensor*>& inputs,
                               const std::vector<const Tensor*>& analytic,
                               const std::function<double()>& loss_fn, Rng& rng, int probes,
                               double eps) {
  double worst = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = *inputs[k];
    const Tensor& g = *analytic[k];
    double sq = 0.0;
    for (int64_t i = 0; i < g.size(); ++i) sq += static_cast<double>(g[i]) * g[i];
    const double rms = std::sqrt(sq / static_cast<double>(g.size()));
    const int n_probes = static_cast<int>(std::min<int64_t>(probes, x.size()));
    for (int p = 0; p < n_probes; ++p) {
      const int64_t i = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(x.size())));
      const float saved = x[i];
      const double an = g[i];
      auto probe = [&](double e) {
        x[i] = static_cast<float>(saved + e);
        const double up = loss_fn();
        x[i] = static_cast<float>(saved - e);
        const double down = loss_fn();
        x[i] = saved;
        const double fd = (up - down) / (2.0 * e);
        return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), rms, 1e-2});
      };
      double rel = probe(eps);
      // A probe that straddles a ReLU kink averages two slopes and is not
      // a valid derivative estimate; shrinking eps moves it off the kink,
      // while a genuinely wrong gradient fails at every eps.
      if (rel > 5e-3) rel = std::min({rel, probe(eps / 4.0), probe(eps / 16.0)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Direct per-output-pixel convolution, float accumulation, loop order
// (di, dj, ci). x: [N,H,W,C], w: [K,K,C,Cout], bias optional [Cout].
inline Tensor conv2d_brute(const Tensor& x, const Tensor& w, const Tensor* bias, int stride,
                           int pad) {
  const int64_t n = x.extent(0), h = x.extent(1), win = x.extent(2), c = x.extent(3);
  const int k = static_cast<int>(w.extent(0));
  const int64_t cout = w.extent(3);
  const int64_t ho = (h + 2 * pad - k) / stride + 1;
  const int64_t wo = (win + 2 * pad - k) / stride + 1;
  Tensor out({n, ho, wo, cout});
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t i = 0; i < ho; ++i) {
      for (int64_t j = 0; j < wo; ++j) {
        for (int64_t co = 0; co < cout; ++co) {
          float acc = bias ? (*bias)[co] : 0.0f;
          for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
              const int64_t y = i * stride + di - pad;
              const int64_t xx = j * stride + dj - pad;
              if (y < 0 || y >= h || xx < 0 || xx >= win) continue;  // zero padding
              for (int64_t ci = 0; ci < c; ++ci) {
                acc += x[((b * h + y) * win + xx) * c + ci] *
                       w[((int64_t{di} * k + dj) * c + ci) * cout + co];
              }
            }
          }
          out[((b * ho + i) * wo + j) * cout + co] = acc;
        }
      }
    }
  }
  return out;
}

// Triple-loop local convolution. w_ad: [N,H,W,K*K*Cin*Cout] with channel
// q = ((di*K + dj)*Cin + ci)*Cout + co; b_ad: [N,H,W,Cout].
inline Tensor local_conv_brute(const Tensor& x, const Tensor& w_ad, const Tensor& b_ad, int k,
                               int64_t cout) {
  const int64_t n = x.extent(0), h = x.extent(1), win = x.extent(2), c = x.extent(3);
  const int pad = (k - 1) / 2;
  const int64_t cad = int64_t{k} * k * c * cout;
  Tensor out({n, h, win, cout});
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t i = 0; i < h; ++i) {
      for (int64_t j = 0; j < win; ++j) {
        for (int64_t co = 0; co < cout; ++co) {
          float acc = b_ad[((b * h + i) * win + j) * cout + co];
          for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
              const int64_t y = i + di - pad;
              const int64_t xx = j + dj - pad;
              if (y < 0 || y >= h || xx < 0 || xx >= win) continue;
              for (int64_t ci = 0; ci < c; ++ci) {
                acc += x[((b * h + y) * win + xx) * c + ci] *
                       w_ad[((b * h + i) * win + j) * cad +
                            ((int64_t{di} * k + dj) * c + ci) * cout + co];
              }
            }
          }
          out[((b * h + i) * win + j) * cout + co] = acc;
        }
      }
    }
  }
  return out;
}

// Largest singular value by dense SVD (LAPACKE sgesvd).
inline float svd_sigma_max(const Tensor& w, int64_t rows, int64_t cols) {
  std::vector<float> a(w.data(), w.data() + w.size());
  std::vector<float> s(static_cast<size_t>(std::min(rows, cols)));
  std::vector<float> superb(static_cast<size_t>(std::min(rows, cols)));
  const lapack_int info = LAPACKE_sgesvd(
      LAPACK_ROW_MAJOR, 'N', 'N', static_cast<lapack_int>(rows), static_cast<lapack_int>(cols),
      a.data(), static_cast<lapack_int>(cols), s.data(), nullptr, 1, nullptr, 1, superb.data());
  if (info != 0) throw std::runtime_error("LAPACKE_sgesvd failed");
  return s[0];
}

// Variance of a +/-2 sigma truncated normal, for the sampling oracle.
inline double truncated_normal_stddev(double sigma) {
  const double phi2 = 0.05399096651318806;   // pdf at 2
  const double cdf2 = 0.9772498680518208;    // cdf at 2
  const double z = 2.0 * cdf2 - 1.0;
  return sigma * std::sqrt(1.0 - 4.0 * phi2 / z);
}

}  // namespace oracles
