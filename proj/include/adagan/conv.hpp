#pragma once

// 2-D convolution (cross-correlation, zero padding) via im2col + GEMM,
// the depthwise variant, and nearest-neighbor 2x upsampling. Feature maps
// are NHWC; conv weights are [K, K, C_in, C_out], so the flattened weight
// is directly the [K*K*C_in, C_out] GEMM operand.

#include <chrono>
#include <cstdio>
#include <memory>
#include <utility>

#include "adagan/ops.hpp"
#include "adagan/rng.hpp"

namespace adagan {

inline int same_pad(int k) { return (k - 1) / 2; }

// Optional activation fused into conv2d so wide outputs (the adaptive
// weight field) need only one tape node.
enum class ConvAct { kNone, kRelu };

struct Conv2dParams {
  Tensor weight;  // [K, K, C_in, C_out]
  Tensor bias;    // [C_out]
  int stride = 1;
  int pad = -1;  // -1: same-size padding (stride 1, odd K)

  static Conv2dParams init(int k, int c_in, int c_out, int stride, int pad, Rng& rng,
                           float stddev = 0.02f) {
    if (stride != 1 && stride != 2) throw ContractError("conv2d stride must be 1 or 2");
    if (pad < 0 && k % 2 == 0) {
      throw ContractError("same-size padding requires an odd kernel, got k=" + std::to_string(k));
    }
    Conv2dParams p;
    p.weight = init_truncated_normal(rng, {k, k, c_in, c_out}, stddev);
    p.bias = Tensor::zeros({c_out});
    p.stride = stride;
    p.pad = pad;
    return p;
  }
};

namespace detail {

inline Tensor pad_nhwc(const Tensor& x, int pad) {
  const int64_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  Tensor out = Tensor::zeros({n, h + 2 * pad, w + 2 * pad, c});
  const int64_t wp = w + 2 * pad;
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t b = n0; b < n1; ++b) {
      for (int64_t i = 0; i < h; ++i) {
        std::memcpy(out.data() + ((b * (h + 2 * pad) + i + pad) * wp + pad) * c,
                    x.data() + ((b * h + i) * w) * c, sizeof(float) * static_cast<size_t>(w * c));
      }
    }
  });
  return out;
}

inline Tensor crop_nhwc(const Tensor& xp, int pad, int64_t h, int64_t w) {
  const int64_t n = xp.extent(0), c = xp.extent(3);
  const int64_t wp = xp.extent(2);
  Tensor out = Tensor::uninit({n, h, w, c});
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t b = n0; b < n1; ++b) {
      for (int64_t i = 0; i < h; ++i) {
        std::memcpy(out.data() + ((b * h + i) * w) * c,
                    xp.data() + ((b * xp.extent(1) + i + pad) * wp + pad) * c,
                    sizeof(float) * static_cast<size_t>(w * c));
      }
    }
  });
  return out;
}

// Patch matrix [N*H'*W', K*K*C] from the padded input.
inline Tensor im2col(const Tensor& xp, int k, int stride, int64_t ho, int64_t wo) {
  const int64_t n = xp.extent(0), hp = xp.extent(1), wp = xp.extent(2), c = xp.extent(3);
  (void)hp;
  Tensor a = Tensor::uninit({n * ho * wo, k * k * c});
  const int64_t row_len = k * k * c;
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t b = n0; b < n1; ++b) {
      for (int64_t i = 0; i < ho; ++i) {
        for (int64_t j = 0; j < wo; ++j) {
          float* dst = a.data() + ((b * ho + i) * wo + j) * row_len;
          for (int di = 0; di < k; ++di) {
            std::memcpy(dst + di * k * c,
                        xp.data() + ((b * hp + i * stride + di) * wp + j * stride) * c,
                        sizeof(float) * static_cast<size_t>(k * c));
          }
        }
      }
    }
  });
  return a;
}

// Scatter-add of the patch-matrix gradient back into padded-input layout.
inline Tensor col2im(const Tensor& da, int64_t n, int64_t hp, int64_t wp, int64_t c, int k,
                     int stride, int64_t ho, int64_t wo) {
  Tensor dxp = Tensor::zeros({n, hp, wp, c});
  const int64_t row_len = k * k * c;
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t b = n0; b < n1; ++b) {
      for (int64_t i = 0; i < ho; ++i) {
        for (int64_t j = 0; j < wo; ++j) {
          const float* src = da.data() + ((b * ho + i) * wo + j) * row_len;
          for (int di = 0; di < k; ++di) {
            float* dst = dxp.data() + ((b * hp + i * stride + di) * wp + j * stride) * c;
            const float* s = src + di * k * c;
            for (int64_t t = 0; t < k * c; ++t) dst[t] += s[t];
          }
        }
      }
    }
  });
  return dxp;
}

}  // namespace detail

namespace ops {

// x: [N,H,W,C_in], w: [K,K,C_in,C_out], optional bias [C_out].
// pad < 0 selects same-size padding (stride 1, odd K).
inline Var conv2d(Tape& tape, Var x, Var w, Var bias, int stride = 1, int pad = -1,
                  ConvAct act = ConvAct::kNone) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  if (xv.rank() != 4 || wv.rank() != 4) {
    throw ShapeError("conv2d: expected NHWC input and KKIO weight, got " + shape_str(xv.shape()) +
                     " and " + shape_str(wv.shape()));
  }
  const int k = static_cast<int>(wv.extent(0));
  if (wv.extent(1) != k) throw ShapeError("conv2d: non-square kernel " + shape_str(wv.shape()));
  if (wv.extent(2) != xv.extent(3)) {
    throw ShapeError("conv2d: input channels " + shape_str(xv.shape()) +
                     " do not match weight " + shape_str(wv.shape()));
  }
  if (pad < 0) {
    if (k % 2 == 0 || stride != 1) {
      throw ContractError("conv2d: same-size padding requires odd kernel and stride 1");
    }
    pad = same_pad(k);
  }
  const int64_t n = xv.extent(0), h = xv.extent(1), w_in = xv.extent(2), c_in = xv.extent(3);
  const int64_t c_out = wv.extent(3);
  const int64_t ho = (h + 2 * pad - k) / stride + 1;
  const int64_t wo = (w_in + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " too large for input " +
                     shape_str(xv.shape()));
  }
  if (bias.valid()) {
    const Tensor& bv = tape.value(bias);
    if (bv.rank() != 1 || bv.extent(0) != c_out) {
      throw ShapeError("conv2d: bias " + shape_str(bv.shape()) + " does not match C_out " +
                       std::to_string(c_out));
    }
  }

  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  const int64_t rows = n * ho * wo;
  const int64_t cols = static_cast<int64_t>(k) * k * c_in;

  std::shared_ptr<Tensor> a_cache;
  const float* a_ptr;
  if (pointwise) {
    a_ptr = xv.data();  // patches are the input itself
  } else {
    Tensor xp = detail::pad_nhwc(xv, pad);
    a_cache = std::make_shared<Tensor>(detail::im2col(xp, k, stride, ho, wo));
    a_ptr = a_cache->data();
  }

  Tensor out = Tensor::uninit({n, ho, wo, c_out});
  detail::gemm(false, false, rows, c_out, cols, a_ptr, wv.data(), out.data());
  if (bias.valid() || act == ConvAct::kRelu) {
    const float* bp = bias.valid() ? tape.value(bias).data() : nullptr;
    const bool relu = act == ConvAct::kRelu;
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        float* orow = out.data() + r * c_out;
        for (int64_t j = 0; j < c_out; ++j) {
          float v = orow[j] + (bp ? bp[j] : 0.0f);
          orow[j] = relu && v < 0 ? 0.0f : v;
        }
      }
    });
  }

  return tape.record_op(
      std::move(out), [x, w, bias, a_cache, pointwise, stride, pad, k, n, h, w_in, c_in, c_out, ho,
                       wo, rows, cols, act](Var out_var) {
        return [=](Tape& t) {
#ifdef ADAGAN_PROF
          auto prof_t0 = std::chrono::steady_clock::now();
          auto prof_mark = [&](const char* what) {
            auto now = std::chrono::steady_clock::now();
            fprintf(stderr, "[prof] %s %.1fms\n", what,
                    std::chrono::duration<double, std::milli>(now - prof_t0).count());
            prof_t0 = now;
          };
#else
          auto prof_mark = [&](const char*) {};
#endif
          const Tensor& g_raw = t.grad(out_var);  // [N,Ho,Wo,Cout]
          Tensor masked;
          const Tensor* gp_t = &g_raw;
          if (act == ConvAct::kRelu) {
            // ReLU'(0) := 0; the output is its own mask.
            const Tensor& y = t.value(out_var);
            prof_mark("mask:get");
            masked = Tensor::uninit(g_raw.shape());
            prof_mark("mask:alloc");
            const float* yp = y.data();
            const float* gr = g_raw.data();
            float* mp = masked.data();
            parallel_for(g_raw.size(), [&](int64_t i0, int64_t i1) {
              for (int64_t i = i0; i < i1; ++i) mp[i] = yp[i] > 0 ? gr[i] : 0.0f;
            });
            prof_mark("mask:loop");
            gp_t = &masked;
          }
          prof_mark("mask");
          const Tensor& g = *gp_t;
          if (bias.valid()) {
            Tensor gb = Tensor::zeros({c_out});
            const float* gp = g.data();
            float* gbp = gb.data();
            for (int64_t r = 0; r < rows; ++r) {
              const float* grow = gp + r * c_out;
              for (int64_t j = 0; j < c_out; ++j) gbp[j] += grow[j];
            }
            t.add_grad(bias, std::move(gb));
          }
          prof_mark("db");
          const float* a_ptr2 = pointwise ? t.value(x).data() : a_cache->data();
          Tensor gw = Tensor::uninit({k, k, c_in, c_out});
          detail::gemm(true, false, cols, c_out, rows, a_ptr2, g.data(), gw.data());
          prof_mark("dW");
          t.add_grad(w, std::move(gw));
          prof_mark("addW");

          if (pointwise) {
            Tensor gx = Tensor::uninit({n, h, w_in, c_in});
            detail::gemm(false, true, rows, cols, c_out, g.data(), t.value(w).data(), gx.data());
            prof_mark("dA");
            t.add_grad(x, std::move(gx));
            prof_mark("addX");
          } else {
            Tensor da = Tensor::uninit({rows, cols});
            detail::gemm(false, true, rows, cols, c_out, g.data(), t.value(w).data(), da.data());
            Tensor dxp =
                detail::col2im(da, n, h + 2 * pad, w_in + 2 * pad, c_in, k, stride, ho, wo);
            t.add_grad(x, detail::crop_nhwc(dxp, pad, h, w_in));
          }
        };
      });
}

inline Var conv2d(Tape& tape, Var x, Var w, int stride = 1, int pad = -1) {
  return conv2d(tape, x, w, Var{}, stride, pad);
}

// Depthwise convolution, multiplier 1: w is [K,K,C], stride 1, same padding.
inline Var depthwise_conv2d(Tape& tape, Var x, Var w) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  if (xv.rank() != 4 || wv.rank() != 3 || wv.extent(0) != wv.extent(1)) {
    throw ShapeError("depthwise_conv2d: bad shapes " + shape_str(xv.shape()) + ", " +
                     shape_str(wv.shape()));
  }
  if (wv.extent(2) != xv.extent(3)) {
    throw ShapeError("depthwise_conv2d: channels " + shape_str(xv.shape()) + " vs " +
                     shape_str(wv.shape()));
  }
  const int k = static_cast<int>(wv.extent(0));
  if (k % 2 == 0) throw ContractError("depthwise_conv2d requires an odd kernel");
  const int pad = same_pad(k);
  const int64_t n = xv.extent(0), h = xv.extent(1), w_in = xv.extent(2), c = xv.extent(3);

  Tensor xp = detail::pad_nhwc(xv, pad);
  auto xp_cache = std::make_shared<Tensor>(std::move(xp));
  const int64_t hp = h + 2 * pad, wp = w_in + 2 * pad;
  Tensor out = Tensor::zeros({n, h, w_in, c});
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t b = n0; b < n1; ++b) {
      for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w_in; ++j) {
          float* orow = out.data() + ((b * h + i) * w_in + j) * c;
          for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
              const float* xrow = xp_cache->data() + ((b * hp + i + di) * wp + j + dj) * c;
              const float* wrow = wv.data() + (di * k + dj) * c;
              for (int64_t ch = 0; ch < c; ++ch) orow[ch] += xrow[ch] * wrow[ch];
            }
          }
        }
      }
    }
  });

  return tape.record_op(std::move(out), [x, w, xp_cache, k, pad, n, h, w_in, c, hp,
                                         wp](Var out_var) {
    return [=](Tape& t) {
      const Tensor& g = t.grad(out_var);
      // dw: each (di,dj,c) cell reduces over the batch and space on one worker.
      Tensor gw = Tensor::zeros({k, k, c});
      parallel_for(static_cast<int64_t>(k) * k, [&](int64_t t0, int64_t t1) {
        for (int64_t tap = t0; tap < t1; ++tap) {
          const int di = static_cast<int>(tap) / k, dj = static_cast<int>(tap) % k;
          float* gw_row = gw.data() + tap * c;
          for (int64_t b = 0; b < n; ++b) {
            for (int64_t i = 0; i < h; ++i) {
              const float* xrow = xp_cache->data() + ((b * hp + i + di) * wp + dj) * c;
              const float* grow = g.data() + ((b * h + i) * w_in) * c;
              for (int64_t j = 0; j < w_in; ++j) {
                for (int64_t ch = 0; ch < c; ++ch) {
                  gw_row[ch] += xrow[j * c + ch] * grow[j * c + ch];
                }
              }
            }
          }
        }
      });
      t.add_grad(w, std::move(gw));

      // dx via scatter into padded layout, then crop.
      const Tensor& wv2 = t.value(w);
      Tensor gxp = Tensor::zeros({n, hp, wp, c});
      parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t b = n0; b < n1; ++b) {
          for (int64_t i = 0; i < h; ++i) {
            for (int64_t j = 0; j < w_in; ++j) {
              const float* grow = g.data() + ((b * h + i) * w_in + j) * c;
              for (int di = 0; di < k; ++di) {
                for (int dj = 0; dj < k; ++dj) {
                  float* xrow = gxp.data() + ((b * hp + i + di) * wp + j + dj) * c;
                  const float* wrow = wv2.data() + (di * k + dj) * c;
                  for (int64_t ch = 0; ch < c; ++ch) xrow[ch] += grow[ch] * wrow[ch];
                }
              }
            }
          }
        }
      });
      t.add_grad(x, detail::crop_nhwc(gxp, pad, h, w_in));
    };
  });
}

// Each pixel becomes a 2x2 block; exact replication, no interpolation.
inline Var resize_nn_2x(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4) throw ShapeError("resize_nn_2x: expected NHWC, got " + shape_str(xv.shape()));
  const int64_t n = xv.extent(0), h = xv.extent(1), w = xv.extent(2), c = xv.extent(3);
  Tensor out = Tensor::uninit({n, 2 * h, 2 * w, c});
  parallel_for(n, [&](int64_t n0, int64_t n1) {
    for (int64_t b = n0; b < n1; ++b) {
      for (int64_t i = 0; i < h; ++i) {
        float* row0 = out.data() + ((b * 2 * h + 2 * i) * 2 * w) * c;
        const float* src = xv.data() + ((b * h + i) * w) * c;
        for (int64_t j = 0; j < w; ++j) {
          std::memcpy(row0 + (2 * j) * c, src + j * c, sizeof(float) * static_cast<size_t>(c));
          std::memcpy(row0 + (2 * j + 1) * c, src + j * c, sizeof(float) * static_cast<size_t>(c));
        }
        std::memcpy(row0 + 2 * w * c, row0, sizeof(float) * static_cast<size_t>(2 * w * c));
      }
    }
  });
  return tape.record_op(std::move(out), [x, n, h, w, c](Var out_var) {
    return [=](Tape& t) {
      const Tensor& g = t.grad(out_var);
      Tensor gx = Tensor::uninit({n, h, w, c});
      parallel_for(n, [&](int64_t n0, int64_t n1) {
        for (int64_t b = n0; b < n1; ++b) {
          for (int64_t i = 0; i < h; ++i) {
            float* dst = gx.data() + ((b * h + i) * w) * c;
            for (int64_t j = 0; j < w; ++j) {
              for (int64_t ch = 0; ch < c; ++ch) {
                float s = 0.0f;
                for (int a = 0; a < 2; ++a) {
                  for (int bb = 0; bb < 2; ++bb) {
                    s += g[(((b * 2 * h + 2 * i + a) * 2 * w) + 2 * j + bb) * c + ch];
                  }
                }
                dst[j * c + ch] = s;
              }
            }
          }
        }
      });
      t.add_grad(x, std::move(gx));
    };
  });
}

}  // namespace ops
}  // namespace adagan
