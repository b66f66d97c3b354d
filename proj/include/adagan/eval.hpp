#pragma once

// Desk-scale sample-quality metrics. The classifier two-sample proxy
// trains a small fixed conv net to tell real from generated images and
// reports held-out accuracy (0.5 = indistinguishable, 1.0 = trivially
// fake). Mode coverage counts which shape categories appear among
// generated samples. Both are reported as mean +/- stddev over 10 groups.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "adagan/gan.hpp"

namespace adagan {

// Eval-mode generator samples, drawn in batches on throwaway tapes.
inline Tensor sample_images(Generator& g, int64_t n, Rng& rng, int64_t batch = 64) {
  const int side = g.spec().output_side();
  Tensor out = Tensor::uninit({n, side, side, 3});
  const int64_t img = int64_t{side} * side * 3;
  int64_t done = 0;
  while (done < n) {
    const int64_t take = std::min(batch, n - done);
    Tape tape;
    Var z = tape.leaf(sample_gaussian(rng, {take, g.spec().latent_dim}));
    Var images = g.forward(tape, z, Mode::kEval);
    std::memcpy(out.data() + done * img, tape.value(images).data(),
                sizeof(float) * static_cast<size_t>(take * img));
    done += take;
  }
  return out;
}

struct GroupedMetric {
  std::vector<float> per_group;
  float mean = 0.0f;
  float stddev = 0.0f;

  static GroupedMetric from(std::vector<float> values) {
    GroupedMetric m;
    m.per_group = std::move(values);
    double s = 0.0;
    for (float v : m.per_group) s += v;
    m.mean = static_cast<float>(s / static_cast<double>(m.per_group.size()));
    double var = 0.0;
    for (float v : m.per_group) var += (v - m.mean) * (v - m.mean);
    m.stddev = static_cast<float>(std::sqrt(var / static_cast<double>(m.per_group.size())));
    return m;
  }
};

struct TwoSampleResult {
  float overall_accuracy = 0.0f;  // held-out, all groups pooled
  GroupedMetric groups;
  int64_t n_train = 0;
  int64_t n_held = 0;
};

namespace detail {

// The fixed two-sample classifier: 3x3 conv (8), two strided 4x4 convs
// (16, 32), dense to one logit. Small enough to train in seconds, strong
// enough to separate noise from structure.
struct TwoSampleNet {
  Param c1_w, c1_b, c2_w, c2_b, c3_w, c3_b, d_w, d_b;

  TwoSampleNet(int side, Rng& rng) {
    c1_w = {"c1.w", init_truncated_normal(rng, {3, 3, 3, 8})};
    c1_b = {"c1.b", Tensor::zeros({8})};
    c2_w = {"c2.w", init_truncated_normal(rng, {4, 4, 8, 16})};
    c2_b = {"c2.b", Tensor::zeros({16})};
    c3_w = {"c3.w", init_truncated_normal(rng, {4, 4, 16, 32})};
    c3_b = {"c3.b", Tensor::zeros({32})};
    const int64_t flat = int64_t{side / 4} * (side / 4) * 32;
    d_w = {"d.w", init_truncated_normal(rng, {flat, 1})};
    d_b = {"d.b", Tensor::zeros({1})};
  }

  Var forward(Tape& tape, Var x, Bindings* bind_out) {
    Var h = ops::conv2d(tape, x, bind(tape, c1_w, bind_out), bind(tape, c1_b, bind_out));
    h = ops::leaky_relu(tape, h, 0.1f);
    h = ops::conv2d(tape, h, bind(tape, c2_w, bind_out), bind(tape, c2_b, bind_out), 2, 1);
    h = ops::leaky_relu(tape, h, 0.1f);
    h = ops::conv2d(tape, h, bind(tape, c3_w, bind_out), bind(tape, c3_b, bind_out), 2, 1);
    h = ops::leaky_relu(tape, h, 0.1f);
    return ops::dense(tape, h, bind(tape, d_w, bind_out), bind(tape, d_b, bind_out));
  }

  std::vector<Param*> params() {
    return {&c1_w, &c1_b, &c2_w, &c2_b, &c3_w, &c3_b, &d_w, &d_b};
  }
};

}  // namespace detail

// Protocol (fixed): label real=1/fake=0, shuffle, 70/30 train/held split,
// 8 epochs of Adam(1e-3, 0.9, 0.999) at batch 64, then held-out accuracy
// pooled and per group.
inline TwoSampleResult classifier_two_sample(const Tensor& real, const Tensor& fake,
                                             uint64_t seed, int groups = 10) {
  if (real.rank() != 4 || fake.rank() != 4 || !real.same_shape(fake)) {
    throw ContractError("two-sample test needs matching [n,M,M,3] stacks, got " +
                        shape_str(real.shape()) + " vs " + shape_str(fake.shape()));
  }
  const int64_t n = real.extent(0);
  const int side = static_cast<int>(real.extent(1));
  const int64_t img = int64_t{side} * side * 3;
  const int64_t total = 2 * n;

  Rng rng(seed);
  std::vector<int64_t> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), int64_t{0});  // [0,n): real, [n,2n): fake
  shuffle(order, rng);
  const int64_t n_train = total * 7 / 10;
  const int64_t n_held = total - n_train;

  detail::TwoSampleNet net(side, rng);
  Adam opt(net.params(), AdamConfig{1e-3f, 0.9f, 0.999f, 1e-8f});

  auto gather = [&](const std::vector<int64_t>& idx, int64_t begin, int64_t count, Tensor* x,
                    Tensor* y, Tensor* y_inv) {
    *x = Tensor::uninit({count, side, side, 3});
    *y = Tensor::uninit({count, 1});
    *y_inv = Tensor::uninit({count, 1});
    for (int64_t i = 0; i < count; ++i) {
      const int64_t k = idx[static_cast<size_t>(begin + i)];
      const bool is_real = k < n;
      const float* src = is_real ? real.data() + k * img : fake.data() + (k - n) * img;
      std::memcpy(x->data() + i * img, src, sizeof(float) * static_cast<size_t>(img));
      (*y)[i] = is_real ? 1.0f : 0.0f;
      (*y_inv)[i] = is_real ? 0.0f : 1.0f;
    }
  };

  const int64_t batch = std::min<int64_t>(64, n_train);
  const int epochs = 8;
  std::vector<int64_t> train_idx(order.begin(), order.begin() + n_train);
  for (int e = 0; e < epochs; ++e) {
    Rng erng = rng.split(static_cast<uint64_t>(e) + 100);
    shuffle(train_idx, erng);
    for (int64_t at = 0; at + batch <= n_train; at += batch) {
      Tensor x, y, y_inv;
      gather(train_idx, at, batch, &x, &y, &y_inv);
      Tape tape;
      Var xv = tape.leaf(std::move(x));
      Bindings binds;
      Var logits = net.forward(tape, xv, &binds);
      Var yv = tape.leaf(std::move(y));
      Var yiv = tape.leaf(std::move(y_inv));
      // BCE in logit form: y*softplus(-l) + (1-y)*softplus(l)
      Var loss = ops::mean(
          tape, ops::add(tape, ops::mul(tape, yv, ops::softplus(tape, ops::neg(tape, logits))),
                         ops::mul(tape, yiv, ops::softplus(tape, logits))));
      tape.backward(loss);
      opt.step(tape, binds);
    }
  }

  // Held-out accuracy, pooled and per contiguous group.
  Tensor hx, hy, hy_inv;
  gather(order, n_train, n_held, &hx, &hy, &hy_inv);
  Tape tape;
  Var logits = net.forward(tape, tape.leaf(std::move(hx)), nullptr);
  const Tensor& lv = tape.value(logits);
  int64_t correct = 0;
  std::vector<int64_t> group_hits;
  std::vector<int64_t> group_sizes;
  const int n_groups = static_cast<int>(std::min<int64_t>(groups, n_held));
  group_hits.assign(static_cast<size_t>(n_groups), 0);
  group_sizes.assign(static_cast<size_t>(n_groups), 0);
  for (int64_t i = 0; i < n_held; ++i) {
    const bool predicted_real = lv[i] > 0.0f;
    const bool is_real = hy[i] > 0.5f;
    const bool hit = predicted_real == is_real;
    correct += hit;
    const int g = static_cast<int>(i * n_groups / n_held);
    group_hits[static_cast<size_t>(g)] += hit;
    group_sizes[static_cast<size_t>(g)] += 1;
  }
  std::vector<float> per_group;
  per_group.reserve(static_cast<size_t>(n_groups));
  for (int g = 0; g < n_groups; ++g) {
    per_group.push_back(static_cast<float>(group_hits[static_cast<size_t>(g)]) /
                        static_cast<float>(group_sizes[static_cast<size_t>(g)]));
  }

  TwoSampleResult result;
  result.overall_accuracy = static_cast<float>(correct) / static_cast<float>(n_held);
  result.groups = GroupedMetric::from(std::move(per_group));
  result.n_train = n_train;
  result.n_held = n_held;
  return result;
}

// Fraction of the three shape categories present per group of samples.
inline GroupedMetric mode_coverage(const Tensor& samples, int groups = 10) {
  if (samples.rank() != 4 || samples.extent(3) != 3) {
    throw ContractError("mode_coverage: expected [K,M,M,3], got " + shape_str(samples.shape()));
  }
  const int64_t k = samples.extent(0);
  const int side = static_cast<int>(samples.extent(1));
  const int64_t img = int64_t{side} * side * 3;
  const int n_groups = static_cast<int>(std::min<int64_t>(groups, k));
  std::vector<float> per_group;
  per_group.reserve(static_cast<size_t>(n_groups));
  for (int g = 0; g < n_groups; ++g) {
    const int64_t begin = k * g / n_groups;
    const int64_t end = k * (g + 1) / n_groups;
    bool seen[3] = {false, false, false};
    for (int64_t i = begin; i < end; ++i) {
      const ShapeKind kind = detect_shape(samples.data() + i * img, side);
      if (kind != ShapeKind::kNone) seen[static_cast<int>(kind)] = true;
    }
    per_group.push_back((seen[0] + seen[1] + seen[2]) / 3.0f);
  }
  return GroupedMetric::from(per_group);
}

}  // namespace adagan
