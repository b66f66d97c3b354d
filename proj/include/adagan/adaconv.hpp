#pragma once

// Adaptive Convolution Block: per-pixel convolution weights and biases are
// regressed from the local input window, then applied by a local
// convolution. The weight-regression convolution comes in a naive form and
// a depthwise-separable form that shrinks its cost by roughly the square
// of the local window size.
//
// Flattening convention (normative for checkpoints): adaptive channel
// q in [0, C_adaptive) decodes as q = ((di*K_filter + dj)*C_in + ci)*C_out + co,
// which is exactly the row-major layout of a [K,K,C_in,C_out] conv weight.

#include <string>
#include <utility>

#include "adagan/nn.hpp"

namespace adagan {

enum class AdaConvVariant { kNaive, kSeparable };

inline const char* variant_name(AdaConvVariant v) {
  return v == AdaConvVariant::kNaive ? "naive" : "separable";
}

struct AdaConvBlockSpec {
  int k_filter = 3;    // regressed filter size
  int k_adaptive = 3;  // local window used for the regression
  int64_t c_in = 0;
  int64_t c_out = 0;
  AdaConvVariant variant = AdaConvVariant::kSeparable;
  int c_depthwise = 1;  // depth multiplier, fixed to 1
  int64_t byte_budget = int64_t{2} << 30;

  int64_t c_adaptive() const { return int64_t{k_filter} * k_filter * c_in * c_out; }

  void validate() const {
    if (k_filter < 1 || k_filter % 2 == 0 || k_adaptive < 1 || k_adaptive % 2 == 0) {
      throw ContractError("adaconv: K_filter and K_adaptive must be odd and >= 1");
    }
    if (c_in < 1 || c_out < 1) throw ContractError("adaconv: C_in and C_out must be >= 1");
    if (variant == AdaConvVariant::kSeparable && c_depthwise != 1) {
      throw ContractError("adaconv: separable variant fixes the depth multiplier to 1");
    }
    const int64_t weight_path =
        variant == AdaConvVariant::kNaive
            ? int64_t{k_adaptive} * k_adaptive * c_in * c_adaptive()
            : int64_t{k_adaptive} * k_adaptive * c_in + c_in * c_adaptive();
    check_budget(weight_path * 4, "weight-regression parameters");
  }

  void check_budget(int64_t bytes, const char* what) const {
    if (bytes > byte_budget) {
      throw CapacityError("adaconv: " + std::string(what) + " would need " +
                          std::to_string(bytes) + " bytes, over the " +
                          std::to_string(byte_budget) + "-byte budget");
    }
  }
};

// Learnable tensors of one block. The bias-regression path is a normal
// convolution in both variants; only the weight path is separable.
struct AdaConvBlockParams {
  Tensor w_ww;  // naive:     [Ka, Ka, C_in, C_adaptive]
  Tensor w_dw;  // separable: [Ka, Ka, C_in]
  Tensor w_pw;  // separable: [1, 1, C_in, C_adaptive]
  Tensor b_wb;  // [C_adaptive]
  Tensor w_bw;  // [Ka, Ka, C_in, C_out]
  Tensor b_bb;  // [C_out]

  // Truncated-normal weights (sigma 0.02), zero biases. Zero biases make
  // the initial adaptive kernels near zero after the ReLU; training has to
  // grow them from the regression weights.
  static AdaConvBlockParams init(const AdaConvBlockSpec& s, Rng& rng) {
    return build(s, &rng);
  }

  // Shape-only construction for cost audits.
  static AdaConvBlockParams zeros(const AdaConvBlockSpec& s) { return build(s, nullptr); }

  int64_t weight_path_param_count() const {
    return !w_ww.empty() ? w_ww.size() : w_dw.size() + w_pw.size();
  }

  int64_t total_param_count() const {
    return weight_path_param_count() + b_wb.size() + w_bw.size() + b_bb.size();
  }

 private:
  static AdaConvBlockParams build(const AdaConvBlockSpec& s, Rng* rng) {
    s.validate();
    const int64_t ka = s.k_adaptive, cad = s.c_adaptive();
    auto make = [&](Shape shape) {
      return rng ? init_truncated_normal(*rng, std::move(shape)) : Tensor::zeros(std::move(shape));
    };
    AdaConvBlockParams p;
    if (s.variant == AdaConvVariant::kNaive) {
      p.w_ww = make({ka, ka, s.c_in, cad});
    } else {
      p.w_dw = make({ka, ka, s.c_in});
      p.w_pw = make({1, 1, s.c_in, cad});
    }
    p.b_wb = Tensor::zeros({cad});
    p.w_bw = make({ka, ka, s.c_in, s.c_out});
    p.b_bb = Tensor::zeros({s.c_out});
    return p;
  }
};

// Tape handles for one block's parameters.
struct AdaConvBlockVars {
  Var w_ww, w_dw, w_pw, b_wb, w_bw, b_bb;
};

inline AdaConvBlockVars bind_adaconv(Tape& tape, const AdaConvBlockParams& p) {
  AdaConvBlockVars v;
  if (!p.w_ww.empty()) v.w_ww = tape.leaf(p.w_ww);
  if (!p.w_dw.empty()) v.w_dw = tape.leaf(p.w_dw);
  if (!p.w_pw.empty()) v.w_pw = tape.leaf(p.w_pw);
  v.b_wb = tape.leaf(p.b_wb);
  v.w_bw = tape.leaf(p.w_bw);
  v.b_bb = tape.leaf(p.b_bb);
  return v;
}

namespace ops {

// W_adaptive = ReLU(regression(F_in) + b_wb); [N,H,W,C_adaptive].
// No normalization anywhere in the block.
inline Var regress_weights(Tape& tape, Var x, const AdaConvBlockVars& v,
                           const AdaConvBlockSpec& spec) {
  const Tensor& xv = tape.value(x);
  if (xv.extent(3) != spec.c_in) {
    throw ShapeError("regress_weights: input channels " + shape_str(xv.shape()) +
                     " do not match spec C_in " + std::to_string(spec.c_in));
  }
  spec.check_budget(xv.extent(0) * xv.extent(1) * xv.extent(2) * spec.c_adaptive() * 4,
                    "adaptive weight field");
  if (spec.variant == AdaConvVariant::kNaive) {
    return conv2d(tape, x, v.w_ww, v.b_wb, 1, same_pad(spec.k_adaptive), ConvAct::kRelu);
  }
  Var mixed = depthwise_conv2d(tape, x, v.w_dw);
  return conv2d(tape, mixed, v.w_pw, v.b_wb, 1, 0, ConvAct::kRelu);
}

// b_adaptive = regression(F_in) + b_bb; linear on purpose, so the block
// output stays unbounded. [N,H,W,C_out].
inline Var regress_biases(Tape& tape, Var x, const AdaConvBlockVars& v,
                          const AdaConvBlockSpec& spec) {
  const Tensor& xv = tape.value(x);
  if (xv.extent(3) != spec.c_in) {
    throw ShapeError("regress_biases: input channels " + shape_str(xv.shape()) +
                     " do not match spec C_in " + std::to_string(spec.c_in));
  }
  return conv2d(tape, x, v.w_bw, v.b_bb, 1, same_pad(spec.k_adaptive), ConvAct::kNone);
}

// Applies a distinct K_filter x K_filter x C_in x C_out filter at every
// pixel: F_out(n,i,j,:) = sum over the zero-padded window of
// F_in * W(n,i,j) + b_adaptive(n,i,j,:).
inline Var local_conv(Tape& tape, Var x, Var w_adaptive, Var b_adaptive, int k_filter,
                      int64_t c_out) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w_adaptive);
  const Tensor& bv = tape.value(b_adaptive);
  const int64_t n = xv.extent(0), h = xv.extent(1), w_in = xv.extent(2), c_in = xv.extent(3);
  const int64_t cad = int64_t{k_filter} * k_filter * c_in * c_out;
  if (wv.rank() != 4 || wv.extent(0) != n || wv.extent(1) != h || wv.extent(2) != w_in ||
      wv.extent(3) != cad) {
    throw ShapeError("local_conv: W_adaptive " + shape_str(wv.shape()) +
                     " does not factor as K_filter^2*C_in*C_out=" + std::to_string(cad) +
                     " over input " + shape_str(xv.shape()));
  }
  if (bv.rank() != 4 || bv.extent(0) != n || bv.extent(1) != h || bv.extent(2) != w_in ||
      bv.extent(3) != c_out) {
    throw ShapeError("local_conv: b_adaptive " + shape_str(bv.shape()) + " must be [N,H,W," +
                     std::to_string(c_out) + "]");
  }
  const int k = k_filter;
  const int pad = same_pad(k);
  const int64_t hp = h + 2 * pad, wp = w_in + 2 * pad;

  Tensor xpad = detail::pad_nhwc(xv, pad);
  auto xp_cache = std::make_shared<Tensor>(std::move(xpad));
  Tensor out = Tensor::uninit({n, h, w_in, c_out});
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t b = n0; b < n1; ++b) {
      for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w_in; ++j) {
          float* orow = out.data() + ((b * h + i) * w_in + j) * c_out;
          const float* brow = bv.data() + ((b * h + i) * w_in + j) * c_out;
          std::memcpy(orow, brow, sizeof(float) * static_cast<size_t>(c_out));
          const float* wpix = wv.data() + ((b * h + i) * w_in + j) * cad;
          for (int di = 0; di < k; ++di) {
            const float* xrow = xp_cache->data() + ((b * hp + i + di) * wp + j) * c_in;
            for (int dj = 0; dj < k; ++dj) {
              for (int64_t ci = 0; ci < c_in; ++ci) {
                const float xval = xrow[dj * c_in + ci];
                if (xval == 0.0f) continue;
                const float* wseg = wpix + ((int64_t{di} * k + dj) * c_in + ci) * c_out;
                for (int64_t co = 0; co < c_out; ++co) orow[co] += xval * wseg[co];
              }
            }
          }
        }
      }
    }
  });

  return tape.record_op(std::move(out), [x, w_adaptive, b_adaptive, xp_cache, k, pad, n, h, w_in,
                                         c_in, c_out, cad, hp, wp](Var out_var) {
    return [=](Tape& t) {
      const Tensor& g = t.grad(out_var);  // [N,H,W,C_out]

      // dW(n,i,j)[di,dj,ci,co] = x_pad(n,i+di,j+dj,ci) * g(n,i,j,co)
      Tensor gw = Tensor::uninit({n, h, w_in, cad});
      parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t b = n0; b < n1; ++b) {
          for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w_in; ++j) {
              float* gwpix = gw.data() + ((b * h + i) * w_in + j) * cad;
              const float* grow = g.data() + ((b * h + i) * w_in + j) * c_out;
              for (int di = 0; di < k; ++di) {
                const float* xrow = xp_cache->data() + ((b * hp + i + di) * wp + j) * c_in;
                for (int dj = 0; dj < k; ++dj) {
                  for (int64_t ci = 0; ci < c_in; ++ci) {
                    const float xval = xrow[dj * c_in + ci];
                    float* seg = gwpix + ((int64_t{di} * k + dj) * c_in + ci) * c_out;
                    for (int64_t co = 0; co < c_out; ++co) seg[co] = xval * grow[co];
                  }
                }
              }
            }
          }
        }
      });
      t.add_grad(w_adaptive, std::move(gw));

      // dx scattered into padded layout, then cropped.
      const Tensor& wv2 = t.value(w_adaptive);
      Tensor gxp = Tensor::zeros({n, hp, wp, c_in});
      parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t b = n0; b < n1; ++b) {
          for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w_in; ++j) {
              const float* grow = g.data() + ((b * h + i) * w_in + j) * c_out;
              const float* wpix = wv2.data() + ((b * h + i) * w_in + j) * cad;
              for (int di = 0; di < k; ++di) {
                float* xrow = gxp.data() + ((b * hp + i + di) * wp + j) * c_in;
                for (int dj = 0; dj < k; ++dj) {
                  for (int64_t ci = 0; ci < c_in; ++ci) {
                    const float* wseg = wpix + ((int64_t{di} * k + dj) * c_in + ci) * c_out;
                    float acc = 0.0f;
                    for (int64_t co = 0; co < c_out; ++co) acc += wseg[co] * grow[co];
                    xrow[dj * c_in + ci] += acc;
                  }
                }
              }
            }
          }
        }
      });
      t.add_grad(x, detail::crop_nhwc(gxp, pad, h, w_in));

      t.add_grad(b_adaptive, Tensor(g));
    };
  });
}

// Full block: F_out = local_conv(F_in, regress_weights(F_in),
// regress_biases(F_in)). Spatial dims preserved, differentiable end to end.
inline Var adaconv_block(Tape& tape, Var x, const AdaConvBlockVars& v,
                         const AdaConvBlockSpec& spec) {
  Var w_ad = regress_weights(tape, x, v, spec);
  Var b_ad = regress_biases(tape, x, v, spec);
  return local_conv(tape, x, w_ad, b_ad, spec.k_filter, spec.c_out);
}

}  // namespace ops

// Analytic size/cost of the weight-regression path, per the block's
// construction formulas. `flops_*` are multiply-accumulates per output
// pixel; the ratio approaches K_adaptive^2 as C_adaptive grows.
struct AdaConvCost {
  int64_t params_naive = 0;
  int64_t params_separable = 0;
  int64_t flops_naive = 0;
  int64_t flops_separable = 0;
  double ratio = 0.0;
};

inline AdaConvCost cost_model(const AdaConvBlockSpec& spec) {
  AdaConvCost c;
  const int64_t ka2 = int64_t{spec.k_adaptive} * spec.k_adaptive;
  const int64_t cad = spec.c_adaptive();
  const int64_t cdw = spec.c_depthwise;
  c.params_naive = ka2 * spec.c_in * cad;
  c.params_separable = ka2 * spec.c_in * cdw +
                       cdw * spec.c_in * int64_t{spec.k_filter} * spec.k_filter * spec.c_in *
                           spec.c_out;
  c.flops_naive = c.params_naive;
  c.flops_separable = c.params_separable;
  c.ratio = static_cast<double>(c.params_naive) / static_cast<double>(c.params_separable);
  return c;
}

}  // namespace adagan
