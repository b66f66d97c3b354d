#pragma once

// Batch normalization (per-channel over N,H,W) and the dense layer.

#include <cmath>
#include <utility>
#include <vector>

#include "adagan/conv.hpp"

namespace adagan {

enum class Mode { kTrain, kEval };

struct BatchNormParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-5f;
  float momentum = 0.9f;

  static BatchNormParams init(int64_t c) {
    BatchNormParams p;
    p.gamma = Tensor::ones({c});
    p.beta = Tensor::zeros({c});
    p.running_mean = Tensor::zeros({c});
    p.running_var = Tensor::ones({c});
    return p;
  }
};

namespace ops {

// Train mode normalizes with biased batch statistics over (N,H,W) per
// channel and updates the running buffers in `params` (gamma/beta
// gradients flow through the tape vars). Eval mode uses the running
// statistics as constants.
inline Var batch_norm(Tape& tape, Var x, Var gamma, Var beta, BatchNormParams& params,
                      Mode mode) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4) throw ShapeError("batch_norm: expected NHWC, got " + shape_str(xv.shape()));
  const int64_t c = xv.extent(3);
  const int64_t m = xv.size() / c;
  if (tape.value(gamma).extent(0) != c || tape.value(beta).extent(0) != c) {
    throw ShapeError("batch_norm: gamma/beta do not match channels " + std::to_string(c));
  }
  if (!(params.epsilon > 0)) throw ContractError("batch_norm: epsilon must be > 0");
  if (mode == Mode::kTrain && m < 2) {
    throw ContractError("batch_norm: train mode needs at least 2 elements per channel, got " +
                        std::to_string(m));
  }

  std::vector<float> mean_c(static_cast<size_t>(c)), inv_std_c(static_cast<size_t>(c));
  if (mode == Mode::kTrain) {
    std::vector<double> sum(static_cast<size_t>(c), 0.0), sq(static_cast<size_t>(c), 0.0);
    const float* xp = xv.data();
    for (int64_t r = 0; r < m; ++r) {
      const float* row = xp + r * c;
      for (int64_t j = 0; j < c; ++j) {
        sum[static_cast<size_t>(j)] += row[j];
        sq[static_cast<size_t>(j)] += static_cast<double>(row[j]) * row[j];
      }
    }
    for (int64_t j = 0; j < c; ++j) {
      const double mu = sum[static_cast<size_t>(j)] / static_cast<double>(m);
      double var = sq[static_cast<size_t>(j)] / static_cast<double>(m) - mu * mu;
      if (var < 0) var = 0;  // cancellation guard
      mean_c[static_cast<size_t>(j)] = static_cast<float>(mu);
      inv_std_c[static_cast<size_t>(j)] =
          static_cast<float>(1.0 / std::sqrt(var + params.epsilon));
      params.running_mean[j] =
          params.momentum * params.running_mean[j] + (1.0f - params.momentum) * static_cast<float>(mu);
      params.running_var[j] = params.momentum * params.running_var[j] +
                              (1.0f - params.momentum) * static_cast<float>(var);
    }
  } else {
    for (int64_t j = 0; j < c; ++j) {
      mean_c[static_cast<size_t>(j)] = params.running_mean[j];
      inv_std_c[static_cast<size_t>(j)] =
          1.0f / std::sqrt(params.running_var[j] + params.epsilon);
    }
  }

  const Tensor& gv = tape.value(gamma);
  const Tensor& bv = tape.value(beta);
  Tensor out = Tensor::uninit(xv.shape());
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const float* row = xv.data() + r * c;
      float* orow = out.data() + r * c;
      for (int64_t j = 0; j < c; ++j) {
        orow[j] = gv[j] * (row[j] - mean_c[static_cast<size_t>(j)]) *
                      inv_std_c[static_cast<size_t>(j)] +
                  bv[j];
      }
    }
  });

  const bool train = mode == Mode::kTrain;
  return tape.record_op(std::move(out), [x, gamma, beta, mean_c, inv_std_c, c, m,
                                         train](Var out_var) {
    return [=](Tape& t) {
      const Tensor& g = t.grad(out_var);
      const Tensor& xv2 = t.value(x);
      const Tensor& gv2 = t.value(gamma);
      // Per-channel reductions: sum g and sum g*xhat.
      std::vector<double> sum_g(static_cast<size_t>(c), 0.0), sum_gx(static_cast<size_t>(c), 0.0);
      for (int64_t r = 0; r < m; ++r) {
        const float* grow = g.data() + r * c;
        const float* xrow = xv2.data() + r * c;
        for (int64_t j = 0; j < c; ++j) {
          const float xhat =
              (xrow[j] - mean_c[static_cast<size_t>(j)]) * inv_std_c[static_cast<size_t>(j)];
          sum_g[static_cast<size_t>(j)] += grow[j];
          sum_gx[static_cast<size_t>(j)] += static_cast<double>(grow[j]) * xhat;
        }
      }
      Tensor ggamma = Tensor::uninit({c});
      Tensor gbeta = Tensor::uninit({c});
      for (int64_t j = 0; j < c; ++j) {
        ggamma[j] = static_cast<float>(sum_gx[static_cast<size_t>(j)]);
        gbeta[j] = static_cast<float>(sum_g[static_cast<size_t>(j)]);
      }
      t.add_grad(gamma, std::move(ggamma));
      t.add_grad(beta, std::move(gbeta));

      Tensor gx = Tensor::uninit(xv2.shape());
      if (train) {
        // dx = (gamma*inv/m) * (m*g - sum_g - xhat*sum_gx)
        parallel_for(m, [&](int64_t r0, int64_t r1) {
          for (int64_t r = r0; r < r1; ++r) {
            const float* grow = g.data() + r * c;
            const float* xrow = xv2.data() + r * c;
            float* orow = gx.data() + r * c;
            for (int64_t j = 0; j < c; ++j) {
              const size_t js = static_cast<size_t>(j);
              const float xhat = (xrow[j] - mean_c[js]) * inv_std_c[js];
              orow[j] = gv2[j] * inv_std_c[js] / static_cast<float>(m) *
                        (static_cast<float>(m) * grow[j] - static_cast<float>(sum_g[js]) -
                         xhat * static_cast<float>(sum_gx[js]));
            }
          }
        });
      } else {
        parallel_for(m, [&](int64_t r0, int64_t r1) {
          for (int64_t r = r0; r < r1; ++r) {
            const float* grow = g.data() + r * c;
            float* orow = gx.data() + r * c;
            for (int64_t j = 0; j < c; ++j) {
              orow[j] = grow[j] * gv2[j] * inv_std_c[static_cast<size_t>(j)];
            }
          }
        });
      }
      t.add_grad(x, std::move(gx));
    };
  });
}

// matmul + bias over flattened non-batch axes: [N, ...] -> [N, units].
inline Var dense(Tape& tape, Var x, Var w, Var bias) {
  const Tensor& xv = tape.value(x);
  const int64_t n = xv.extent(0);
  const int64_t d = xv.size() / n;
  Var flat = xv.rank() == 2 ? x : reshape(tape, x, {n, d});
  Var y = matmul(tape, flat, w);
  return bias.valid() ? bias_add(tape, y, bias) : y;
}

}  // namespace ops
}  // namespace adagan
