#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "adagan/ops.hpp"
#include "adagan/rng.hpp"
#include "adagan/tape.hpp"
#include "adagan/tensor.hpp"
#include "oracles.hpp"

using namespace adagan;

TEST(Tensor, IndexRoundTrip) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24);
  float v = 0.0f;
  for (int64_t i = 0; i < 2; ++i) {
    for (int64_t j = 0; j < 3; ++j) {
      for (int64_t k = 0; k < 4; ++k) t.at({i, j, k}) = v++;
    }
  }
  EXPECT_FLOAT_EQ(t.at({0, 0, 0}), 0.0f);
  EXPECT_FLOAT_EQ(t.at({1, 2, 3}), 23.0f);
  EXPECT_FLOAT_EQ(t[t.offset({1, 0, 2})], 14.0f);
}

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  EXPECT_THROW(Tensor({4}).reshaped({3}), ShapeError);
}

TEST(Rng, DeterministicStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(43);
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) differs |= a2.next_u64() != c.next_u64();
  EXPECT_TRUE(differs);
}

TEST(Rng, GaussianMoments) {
  Rng rng(42);
  Tensor t = sample_gaussian(rng, {10000});
  double sum = 0.0, sq = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) {
    sum += t[i];
    sq += static_cast<double>(t[i]) * t[i];
  }
  const double mean = sum / t.size();
  const double var = sq / t.size() - mean * mean;
  EXPECT_GE(mean, -0.05);
  EXPECT_LE(mean, 0.05);
  EXPECT_GE(var, 0.9);
  EXPECT_LE(var, 1.1);
}

TEST(Rng, GaussianBitIdenticalAcrossCalls) {
  Rng a(7), b(7);
  Tensor ta = sample_gaussian(a, {333});
  Tensor tb = sample_gaussian(b, {333});
  for (int64_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i], tb[i]);
  Rng c(8);
  Tensor tc = sample_gaussian(c, {333});
  int diff = 0;
  for (int64_t i = 0; i < ta.size(); ++i) diff += ta[i] != tc[i];
  EXPECT_GE(diff, 1);
}

TEST(Rng, TruncatedNormalBoundsAndSpread) {
  Rng rng(3);
  Tensor t = init_truncated_normal(rng, {100000}, 0.02f);
  double sq = 0.0;
  for (int64_t i = 0; i < t.size(); ++i) {
    ASSERT_LE(std::abs(t[i]), 0.04f);
    sq += static_cast<double>(t[i]) * t[i];
  }
  const double stddev = std::sqrt(sq / t.size());
  EXPECT_GE(stddev, 0.017);
  EXPECT_LE(stddev, 0.021);
  // reference: analytic stddev of the +/-2 sigma truncation
  EXPECT_NEAR(stddev, oracles::truncated_normal_stddev(0.02), 5e-4);
}

TEST(Rng, TruncatedNormalScalarShape) {
  Rng rng(5);
  Tensor t = init_truncated_normal(rng, {1}, 0.02f);
  EXPECT_EQ(t.size(), 1);
}

TEST(Matmul, IdentityAndHandExamples) {
  Tape tape;
  Var i2 = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = tape.leaf(Tensor({2, 2}, {3, 4, 5, 6}));
  const Tensor& prod = tape.value(ops::matmul(tape, i2, m));
  EXPECT_FLOAT_EQ(prod[0], 3);
  EXPECT_FLOAT_EQ(prod[1], 4);
  EXPECT_FLOAT_EQ(prod[2], 5);
  EXPECT_FLOAT_EQ(prod[3], 6);

  Var a = tape.leaf(Tensor({1, 2}, {1, 2}));
  Var b = tape.leaf(Tensor({2, 1}, {3, 4}));
  EXPECT_FLOAT_EQ(tape.value(ops::matmul(tape, a, b))[0], 11.0f);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 3}));
  Var b = tape.leaf(Tensor({4, 2}));
  try {
    ops::matmul(tape, a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,2]"), std::string::npos);
  }
}

// Weighted-sum loss so every output element has a distinct upstream weight.
static double weighted_loss(Tape& tape, Var y, const Tensor& weights) {
  const Tensor& yv = tape.value(y);
  double s = 0.0;
  for (int64_t i = 0; i < yv.size(); ++i) s += static_cast<double>(yv[i]) * weights[i];
  return s;
}

TEST(Matmul, GradMatchesFiniteDifferences) {
  Rng rng(11);
  for (int inst = 0; inst < 20; ++inst) {
    Tensor a = oracles::random_tensor(rng, {4, 5});
    Tensor b = oracles::random_tensor(rng, {5, 3});
    Tensor r = oracles::random_tensor(rng, {4, 3});
    Tensor ga, gb;
    {
      Tape tape;
      Var av = tape.leaf(a), bv = tape.leaf(b), rv = tape.leaf(r);
      Var loss = ops::sum(tape, ops::mul(tape, ops::matmul(tape, av, bv), rv));
      tape.backward(loss);
      ga = tape.grad(av);
      gb = tape.grad(bv);
    }
    auto loss_fn = [&]() {
      Tape tape;
      Var av = tape.leaf(a), bv = tape.leaf(b);
      return weighted_loss(tape, ops::matmul(tape, av, bv), r);
    };
    const double err =
        oracles::max_rel_grad_err({&a, &b}, {&ga, &gb}, loss_fn, rng, 6, 1e-3);
    EXPECT_LE(err, 1e-3) << "instance " << inst;
  }
}

TEST(Elementwise, Examples) {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {-1, 0, 2}));
  const Tensor& r = tape.value(ops::relu(tape, x));
  EXPECT_FLOAT_EQ(r[0], 0);
  EXPECT_FLOAT_EQ(r[1], 0);
  EXPECT_FLOAT_EQ(r[2], 2);

  Var z = tape.leaf(Tensor({1}, {0}));
  EXPECT_FLOAT_EQ(tape.value(ops::tanh(tape, z))[0], 0.0f);

  Var l = tape.leaf(Tensor({3}, {-10, 0, 10}));
  const Tensor& lr = tape.value(ops::leaky_relu(tape, l, 0.1f));
  EXPECT_FLOAT_EQ(lr[0], -1);
  EXPECT_FLOAT_EQ(lr[1], 0);
  EXPECT_FLOAT_EQ(lr[2], 10);
  const Tensor& id = tape.value(ops::leaky_relu(tape, l, 1.0f));
  EXPECT_FLOAT_EQ(id[0], -10);
  const Tensor& as_relu = tape.value(ops::leaky_relu(tape, l, 0.0f));
  EXPECT_FLOAT_EQ(as_relu[0], 0);
  EXPECT_FLOAT_EQ(as_relu[2], 10);

  Var big = tape.leaf(Tensor({1}, {100}));
  EXPECT_NEAR(tape.value(ops::softplus(tape, big))[0], 100.0f, 1e-6f);
}

TEST(Elementwise, ShapeMismatch) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 2}));
  Var b = tape.leaf(Tensor({2, 3}));
  EXPECT_THROW(ops::add(tape, a, b), ShapeError);
}

TEST(Elementwise, AddGradMatchesFiniteDifferences) {
  Rng rng(13);
  for (int inst = 0; inst < 20; ++inst) {
    Tensor a = oracles::random_tensor(rng, {3, 3});
    Tensor b = oracles::random_tensor(rng, {3, 3});
    Tensor r = oracles::random_tensor(rng, {3, 3});
    Tensor ga, gb;
    {
      Tape tape;
      Var av = tape.leaf(a), bv = tape.leaf(b), rv = tape.leaf(r);
      Var loss = ops::sum(tape, ops::mul(tape, ops::add(tape, av, bv), rv));
      tape.backward(loss);
      ga = tape.grad(av);
      gb = tape.grad(bv);
    }
    auto loss_fn = [&]() {
      Tape tape;
      Var av = tape.leaf(a), bv = tape.leaf(b);
      return weighted_loss(tape, ops::add(tape, av, bv), r);
    };
    const double err = oracles::max_rel_grad_err({&a, &b}, {&ga, &gb}, loss_fn, rng, 5, 1e-3);
    EXPECT_LE(err, 1e-3) << "instance " << inst;
  }
}

TEST(Backward, SumGivesOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor::full({2, 2}, 1.5f));
  Var loss = ops::sum(tape, x);
  tape.backward(loss);
  const Tensor& g = tape.grad(x);
  for (int64_t i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(g[i], 1.0f);
}

TEST(Backward, ReluSubgradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {-1, 2}));
  Var loss = ops::sum(tape, ops::relu(tape, x));
  tape.backward(loss);
  const Tensor& g = tape.grad(x);
  EXPECT_FLOAT_EQ(g[0], 0.0f);
  EXPECT_FLOAT_EQ(g[1], 1.0f);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, RepeatableAfterZeroing) {
  Rng rng(17);
  Tensor x = oracles::random_tensor(rng, {4, 4});
  Tape tape;
  Var xv = tape.leaf(x);
  Var loss = ops::mean(tape, ops::tanh(tape, xv));
  tape.backward(loss);
  Tensor first = tape.grad(xv);
  tape.zero_grads();
  tape.backward(loss);
  const Tensor& second = tape.grad(xv);
  for (int64_t i = 0; i < first.size(); ++i) EXPECT_EQ(first[i], second[i]);
}

TEST(Parallel, DeterministicAcrossThreadCounts) {
  Rng rng(23);
  Tensor a = oracles::random_tensor(rng, {64, 32});
  Tensor b = oracles::random_tensor(rng, {32, 48});
  const int saved = thread_count();
  set_thread_count(1);
  Tensor c1;
  {
    Tape tape;
    c1 = tape.value(ops::matmul(tape, tape.leaf(a), tape.leaf(b)));
  }
  set_thread_count(4);
  Tensor c4;
  {
    Tape tape;
    c4 = tape.value(ops::matmul(tape, tape.leaf(a), tape.leaf(b)));
  }
  set_thread_count(saved);
  for (int64_t i = 0; i < c1.size(); ++i) EXPECT_EQ(c1[i], c4[i]);
}
