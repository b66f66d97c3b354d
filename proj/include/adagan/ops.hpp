#pragma once

// Tape-level primitive ops: elementwise math, matmul, reductions, shape
// moves. Shape errors are raised from the declared shapes before any
// floating-point work happens.

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <utility>

#include "adagan/parallel.hpp"
#include "adagan/tape.hpp"

namespace adagan {
namespace detail {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

// C[MxN] = A[MxK] * B[KxN] (row-major, optional transposes, beta in {0,1}).
// Large products split over rows of C; each element is still accumulated
// by a single worker in a fixed order.
inline void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a,
                 const float* b, float* c, float beta = 0.0f) {
  MapC A(a, trans_a ? k : m, trans_a ? m : k);
  MapC B(b, trans_b ? n : k, trans_b ? k : n);
  const int64_t flops = 2 * m * n * k;
  const int workers = thread_count();
  if (workers <= 1 || m < 2 * workers || flops < (int64_t{1} << 24)) {
    MapM C(c, m, n);
    if (trans_a && trans_b) {
      beta == 0.0f ? void(C.noalias() = A.transpose() * B.transpose())
                   : void(C.noalias() += A.transpose() * B.transpose());
    } else if (trans_a) {
      beta == 0.0f ? void(C.noalias() = A.transpose() * B)
                   : void(C.noalias() += A.transpose() * B);
    } else if (trans_b) {
      beta == 0.0f ? void(C.noalias() = A * B.transpose())
                   : void(C.noalias() += A * B.transpose());
    } else {
      beta == 0.0f ? void(C.noalias() = A * B) : void(C.noalias() += A * B);
    }
    return;
  }
  parallel_for(m, [&](int64_t r0, int64_t r1) {
    if (r0 >= r1) return;
    MapM C(c + r0 * n, r1 - r0, n);
    if (trans_a) {
      auto Ab = A.middleCols(r0, r1 - r0).transpose();
      if (trans_b) {
        beta == 0.0f ? void(C.noalias() = Ab * B.transpose())
                     : void(C.noalias() += Ab * B.transpose());
      } else {
        beta == 0.0f ? void(C.noalias() = Ab * B) : void(C.noalias() += Ab * B);
      }
    } else {
      auto Ab = A.middleRows(r0, r1 - r0);
      if (trans_b) {
        beta == 0.0f ? void(C.noalias() = Ab * B.transpose())
                     : void(C.noalias() += Ab * B.transpose());
      } else {
        beta == 0.0f ? void(C.noalias() = Ab * B) : void(C.noalias() += Ab * B);
      }
    }
  });
}

inline float stable_softplus(float x) {
  const float ax = std::fabs(x);
  return std::log1p(std::exp(-ax)) + (x > 0 ? x : 0.0f);
}

inline float stable_sigmoid(float x) {
  if (x >= 0) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

}  // namespace detail

namespace ops {

// ---- elementwise ----------------------------------------------------------

namespace detail_ew {

// Binary elementwise with scalar broadcast on either side (the only
// broadcast this library supports).
template <typename FwdFn, typename MakeBwd>
Var binary(Tape& tape, Var a, Var b, const char* name, FwdFn fwd, MakeBwd make_bwd) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  const bool a_scalar = av.size() == 1;
  const bool b_scalar = bv.size() == 1;
  if (!a_scalar && !b_scalar && !av.same_shape(bv)) {
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  const Tensor& big = b_scalar ? av : bv;
  Tensor out = Tensor::uninit(big.shape());
  const int64_t n = out.size();
  const float* ap = av.data();
  const float* bp = bv.data();
  float* op = out.data();
  for (int64_t i = 0; i < n; ++i) {
    op[i] = fwd(ap[a_scalar ? 0 : i], bp[b_scalar ? 0 : i]);
  }
  return tape.record_op(std::move(out), [&, a, b, a_scalar, b_scalar, make_bwd](Var out_var) {
    return [a, b, a_scalar, b_scalar, make_bwd, out_var](Tape& t) {
      make_bwd(t, a, b, a_scalar, b_scalar, out_var);
    };
  });
}

inline void reduce_or_pass(Tape& t, Var dst, bool dst_scalar, Tensor&& g) {
  if (!dst_scalar || g.size() == 1) {
    t.add_grad(dst, std::move(g));
    return;
  }
  double s = 0.0;
  const float* p = g.data();
  for (int64_t i = 0; i < g.size(); ++i) s += p[i];
  t.add_grad(dst, Tensor::scalar(static_cast<float>(s)));
}

}  // namespace detail_ew

inline Var add(Tape& tape, Var a, Var b) {
  return detail_ew::binary(
      tape, a, b, "add", [](float x, float y) { return x + y; },
      [](Tape& t, Var a_, Var b_, bool as, bool bs, Var out) {
        const Tensor& g = t.grad(out);
        detail_ew::reduce_or_pass(t, a_, as, Tensor(g));
        detail_ew::reduce_or_pass(t, b_, bs, Tensor(g));
      });
}

inline Var sub(Tape& tape, Var a, Var b) {
  return detail_ew::binary(
      tape, a, b, "sub", [](float x, float y) { return x - y; },
      [](Tape& t, Var a_, Var b_, bool as, bool bs, Var out) {
        const Tensor& g = t.grad(out);
        detail_ew::reduce_or_pass(t, a_, as, Tensor(g));
        Tensor ng = Tensor::uninit(g.shape());
        for (int64_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
        detail_ew::reduce_or_pass(t, b_, bs, std::move(ng));
      });
}

inline Var mul(Tape& tape, Var a, Var b) {
  return detail_ew::binary(
      tape, a, b, "mul", [](float x, float y) { return x * y; },
      [](Tape& t, Var a_, Var b_, bool as, bool bs, Var out) {
        const Tensor& g = t.grad(out);
        const Tensor& av = t.value(a_);
        const Tensor& bv = t.value(b_);
        Tensor ga = Tensor::uninit(g.shape());
        Tensor gb = Tensor::uninit(g.shape());
        for (int64_t i = 0; i < g.size(); ++i) {
          ga[i] = g[i] * bv[bs ? 0 : i];
          gb[i] = g[i] * av[as ? 0 : i];
        }
        detail_ew::reduce_or_pass(t, a_, as, std::move(ga));
        detail_ew::reduce_or_pass(t, b_, bs, std::move(gb));
      });
}

template <typename FwdFn, typename GradFn>
Var unary(Tape& tape, Var a, FwdFn fwd, GradFn grad_from_in_out) {
  const Tensor& av = tape.value(a);
  Tensor out = Tensor::uninit(av.shape());
  for (int64_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return tape.record_op(std::move(out), [a, grad_from_in_out](Var out_var) {
    return [a, out_var, grad_from_in_out](Tape& t) {
      const Tensor& g = t.grad(out_var);
      const Tensor& x = t.value(a);
      const Tensor& y = t.value(out_var);
      Tensor gx = Tensor::uninit(g.shape());
      for (int64_t i = 0; i < g.size(); ++i) gx[i] = g[i] * grad_from_in_out(x[i], y[i]);
      t.add_grad(a, std::move(gx));
    };
  });
}

inline Var scale(Tape& tape, Var a, float s) {
  return unary(
      tape, a, [s](float x) { return x * s; }, [s](float, float) { return s; });
}

inline Var neg(Tape& tape, Var a) { return scale(tape, a, -1.0f); }

// Subgradient at 0 is defined as 0.
inline Var relu(Tape& tape, Var a) {
  return unary(
      tape, a, [](float x) { return x > 0 ? x : 0.0f; },
      [](float, float y) { return y > 0 ? 1.0f : 0.0f; });
}

inline Var leaky_relu(Tape& tape, Var a, float slope = 0.1f) {
  return unary(
      tape, a, [slope](float x) { return x > 0 ? x : slope * x; },
      [slope](float x, float) { return x > 0 ? 1.0f : slope; });
}

inline Var tanh(Tape& tape, Var a) {
  return unary(
      tape, a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

// Overflow-free for the logit magnitudes GAN training produces.
inline Var softplus(Tape& tape, Var a) {
  return unary(
      tape, a, [](float x) { return detail::stable_softplus(x); },
      [](float x, float) { return detail::stable_sigmoid(x); });
}

// ---- matmul ---------------------------------------------------------------

inline Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  }
  const int64_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
  Tensor out = Tensor::uninit({m, n});
  detail::gemm(false, false, m, n, k, av.data(), bv.data(), out.data());
  return tape.record_op(std::move(out), [a, b, m, n, k](Var out_var) {
    return [a, b, m, n, k, out_var](Tape& t) {
      const Tensor& g = t.grad(out_var);
      Tensor ga = Tensor::uninit({m, k});
      detail::gemm(false, true, m, k, n, g.data(), t.value(b).data(), ga.data());
      t.add_grad(a, std::move(ga));
      Tensor gb = Tensor::uninit({k, n});
      detail::gemm(true, false, k, n, m, t.value(a).data(), g.data(), gb.data());
      t.add_grad(b, std::move(gb));
    };
  });
}

// ---- shape moves ----------------------------------------------------------

inline Var reshape(Tape& tape, Var a, Shape new_shape) {
  Tensor out = tape.value(a).reshaped(new_shape);
  return tape.record_op(std::move(out), [a](Var out_var) {
    return [a, out_var](Tape& t) {
      Tensor g = t.grad(out_var).reshaped(t.value(a).shape());
      t.add_grad(a, std::move(g));
    };
  });
}

inline Var stop_gradient(Tape& tape, Var a) {
  return tape.record(Tensor(tape.value(a)), nullptr);
}

// Concatenate along axis 0; trailing extents must match.
inline Var concat0(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Shape rest_a(av.shape().begin() + 1, av.shape().end());
  Shape rest_b(bv.shape().begin() + 1, bv.shape().end());
  if (rest_a != rest_b) {
    throw ShapeError("concat0: trailing shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  Shape out_shape = av.shape();
  out_shape[0] += bv.extent(0);
  Tensor out = Tensor::uninit(out_shape);
  std::memcpy(out.data(), av.data(), sizeof(float) * static_cast<size_t>(av.size()));
  std::memcpy(out.data() + av.size(), bv.data(), sizeof(float) * static_cast<size_t>(bv.size()));
  const int64_t split = av.size();
  return tape.record_op(std::move(out), [a, b, split](Var out_var) {
    return [a, b, split, out_var](Tape& t) {
      const Tensor& g = t.grad(out_var);
      Tensor ga = Tensor::uninit(t.value(a).shape());
      Tensor gb = Tensor::uninit(t.value(b).shape());
      std::memcpy(ga.data(), g.data(), sizeof(float) * static_cast<size_t>(ga.size()));
      std::memcpy(gb.data(), g.data() + split, sizeof(float) * static_cast<size_t>(gb.size()));
      t.add_grad(a, std::move(ga));
      t.add_grad(b, std::move(gb));
    };
  });
}

// Rows [begin, end) along axis 0.
inline Var slice0(Tape& tape, Var a, int64_t begin, int64_t end) {
  const Tensor& av = tape.value(a);
  if (begin < 0 || end > av.extent(0) || begin >= end) {
    throw ShapeError("slice0: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") for shape " + shape_str(av.shape()));
  }
  Shape out_shape = av.shape();
  out_shape[0] = end - begin;
  const int64_t row = av.size() / av.extent(0);
  Tensor out = Tensor::uninit(out_shape);
  std::memcpy(out.data(), av.data() + begin * row,
              sizeof(float) * static_cast<size_t>(out.size()));
  return tape.record_op(std::move(out), [a, begin, row](Var out_var) {
    return [a, begin, row, out_var](Tape& t) {
      const Tensor& g = t.grad(out_var);
      Tensor ga = Tensor::zeros(t.value(a).shape());
      std::memcpy(ga.data() + begin * row, g.data(), sizeof(float) * static_cast<size_t>(g.size()));
      t.add_grad(a, std::move(ga));
    };
  });
}

// ---- reductions -----------------------------------------------------------

inline Var sum(Tape& tape, Var a) {
  const Tensor& av = tape.value(a);
  double s = 0.0;
  for (int64_t i = 0; i < av.size(); ++i) s += av[i];
  return tape.record_op(Tensor::scalar(static_cast<float>(s)), [a](Var out_var) {
    return [a, out_var](Tape& t) {
      const float g = t.grad(out_var)[0];
      t.add_grad(a, Tensor::full(t.value(a).shape(), g));
    };
  });
}

inline Var mean(Tape& tape, Var a) {
  const Tensor& av = tape.value(a);
  const int64_t n = av.size();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += av[i];
  return tape.record_op(Tensor::scalar(static_cast<float>(s / static_cast<double>(n))),
                        [a, n](Var out_var) {
                          return [a, n, out_var](Tape& t) {
                            const float g = t.grad(out_var)[0] / static_cast<float>(n);
                            t.add_grad(a, Tensor::full(t.value(a).shape(), g));
                          };
                        });
}

// Broadcast-add a [C] bias over the last axis.
inline Var bias_add(Tape& tape, Var x, Var b) {
  const Tensor& xv = tape.value(x);
  const Tensor& bv = tape.value(b);
  const int64_t c = xv.extent(xv.rank() - 1);
  if (bv.rank() != 1 || bv.extent(0) != c) {
    throw ShapeError("bias_add: bias " + shape_str(bv.shape()) + " does not match last axis of " +
                     shape_str(xv.shape()));
  }
  Tensor out = Tensor::uninit(xv.shape());
  const int64_t rows = xv.size() / c;
  const float* xp = xv.data();
  const float* bp = bv.data();
  float* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = xp + r * c;
    float* orow = op + r * c;
    for (int64_t j = 0; j < c; ++j) orow[j] = xr[j] + bp[j];
  }
  return tape.record_op(std::move(out), [x, b, c](Var out_var) {
    return [x, b, c, out_var](Tape& t) {
      const Tensor& g = t.grad(out_var);
      const int64_t rows = g.size() / c;
      Tensor gb = Tensor::zeros({c});
      const float* gp = g.data();
      float* gbp = gb.data();
      for (int64_t r = 0; r < rows; ++r) {
        const float* grow = gp + r * c;
        for (int64_t j = 0; j < c; ++j) gbp[j] += grow[j];
      }
      t.add_grad(b, std::move(gb));
      t.add_grad(x, Tensor(g));
    };
  });
}

}  // namespace ops
}  // namespace adagan
