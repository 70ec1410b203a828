#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixnorm/autodiff.hpp"
#include "fixnorm/gradcheck.hpp"
#include "fixnorm/tensor.hpp"

using namespace fixnorm;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  fill_normal(t, rng, scale);
  return t;
}

}  // namespace

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dim(0), 2u);
  t[5] = 2.5;
  EXPECT_DOUBLE_EQ(t[5], 2.5);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), shape_error);
  EXPECT_THROW(Tensor({0, 2}), shape_error);
}

TEST(Tensor, Norms) {
  Tensor a({2}, {3.0, 4.0});
  EXPECT_DOUBLE_EQ(a.norm(), 5.0);
  Tensor b({2}, {0.0, 0.0});
  std::vector<Tensor*> both{&a, &b};
  EXPECT_DOUBLE_EQ(joint_norm(both), 5.0);
}

TEST(Linear, IdentityAndSum) {
  Tape t;
  const ValueId x = t.leaf(Tensor({1, 2}, {1.0, 0.0}));
  const ValueId w = t.leaf(Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  const Tensor& y = t.value(linear(t, x, w));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 0.0);

  Tape t2;
  const ValueId x2 = t2.leaf(Tensor({1, 2}, {1.0, 2.0}));
  const ValueId w2 = t2.leaf(Tensor({2, 1}, {1.0, 1.0}));
  EXPECT_DOUBLE_EQ(t2.value(linear(t2, x2, w2))[0], 3.0);
}

TEST(Linear, ShapeMismatch) {
  Tape t;
  const ValueId x = t.leaf(Tensor({1, 3}));
  const ValueId w = t.leaf(Tensor({2, 2}));
  EXPECT_THROW(linear(t, x, w), shape_error);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 1, 4, 4}, rng);
  Tape t;
  const ValueId xid = t.leaf(x);
  const ValueId k = t.leaf(Tensor({1, 1, 1, 1}, {1.0}));
  const Tensor& y = t.value(conv2d(t, xid, k, 1, 0));
  ASSERT_TRUE(y.same_shape(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, AllOnesSum) {
  Tape t;
  const ValueId x = t.leaf(Tensor::full({1, 1, 2, 2}, 1.0));
  const ValueId k = t.leaf(Tensor::full({1, 1, 2, 2}, 1.0));
  const Tensor& y = t.value(conv2d(t, x, k, 1, 0));
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y[0], 4.0);
}

TEST(Conv2d, ZeroSizeOutputIsError) {
  Tape t;
  const ValueId x = t.leaf(Tensor({1, 1, 2, 2}));
  const ValueId k = t.leaf(Tensor({1, 1, 3, 3}));
  EXPECT_THROW(conv2d(t, x, k, 1, 0), shape_error);
}

TEST(BatchNorm, StandardizesPerChannel) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({8, 3, 2, 2}, rng, 2.0);
  BatchNormState st(3);
  Tape t;
  const ValueId y = batchnorm(t, t.leaf(x), t.leaf(Tensor::full({3}, 1.0)), t.leaf(Tensor({3})),
                              st, true);
  const Tensor& out = t.value(y);
  const std::size_t hw = 4, n = 8 * hw;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t s = 0; s < hw; ++s) mean += out[(b * 3 + c) * hw + s];
    mean /= n;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t s = 0; s < hw; ++s) {
        const double d = out[(b * 3 + c) * hw + s] - mean;
        var += d * d;
      }
    var /= n;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

// Training-mode output is invariant to scaling the pre-BN map (Eq. 1 style
// invariance). Inputs are scaled up so the epsilon term stays negligible.
TEST(BatchNorm, ScaleInvarianceOfPrecedingWeights) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({6, 4}, rng, 10.0);
  Tensor w = random_tensor({4, 5}, rng, 1.0);
  const double c = 7.0;

  auto run = [&](const Tensor& weights) {
    Tape t;
    BatchNormState st(5);
    const ValueId z = linear(t, t.leaf(x), t.leaf(weights));
    const ValueId y = batchnorm(t, z, t.leaf(Tensor::full({5}, 1.0)), t.leaf(Tensor({5})), st, true);
    return t.value(y);
  };

  const Tensor base = run(w);
  const Tensor scaled = run(w * c);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i], scaled[i], 1e-6);
}

// Scaling the preceding weights by c scales their gradient by 1/c.
TEST(BatchNorm, GradientInverseScaling) {
  std::mt19937_64 rng(17);
  Tensor x = random_tensor({6, 4}, rng, 10.0);
  Tensor w = random_tensor({4, 5}, rng, 1.0);
  Tensor probe = random_tensor({6, 5}, rng);

  auto grad = [&](const Tensor& weights) {
    Tape t;
    BatchNormState st(5);
    const ValueId wid = t.leaf(weights);
    const ValueId z = linear(t, t.leaf(x), wid);
    const ValueId y = batchnorm(t, z, t.leaf(Tensor::full({5}, 1.0)), t.leaf(Tensor({5})), st, true);
    t.backward(weighted_sum(t, y, probe));
    return t.grad(wid);
  };

  for (double c : {0.5, 2.0, 10.0}) {
    const Tensor g1 = grad(w);
    const Tensor gc = grad(w * c);
    for (std::size_t i = 0; i < g1.size(); ++i) {
      EXPECT_NEAR(gc[i] * c, g1[i], 1e-6 * std::max(1.0, std::abs(g1[i])));
    }
  }
}

TEST(BatchNorm, DegenerateBatchIsError) {
  Tape t;
  BatchNormState st(2);
  const ValueId x = t.leaf(Tensor({1, 2}));
  EXPECT_THROW(batchnorm(t, x, t.leaf(Tensor::full({2}, 1.0)), t.leaf(Tensor({2})), st, true),
               degenerate_error);
}

TEST(BatchNorm, EvalUsesRunningStats) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({16, 2}, rng);
  BatchNormState st(2);
  for (int i = 0; i < 50; ++i) {
    Tape t;
    batchnorm(t, t.leaf(x), t.leaf(Tensor::full({2}, 1.0)), t.leaf(Tensor({2})), st, true);
  }
  Tape t;
  const Tensor& train_out = t.value(
      batchnorm(t, t.leaf(x), t.leaf(Tensor::full({2}, 1.0)), t.leaf(Tensor({2})), st, true));
  Tape te;
  const Tensor& eval_out = te.value(
      batchnorm(te, te.leaf(x), te.leaf(Tensor::full({2}, 1.0)), te.leaf(Tensor({2})), st, false));
  // after long exposure to the same batch, the two paths nearly agree
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(train_out[i], eval_out[i], 0.05);
  EXPECT_GE(st.running_var[0], 0.0);
  EXPECT_GE(st.running_var[1], 0.0);
}

TEST(ReluGap, Basics) {
  Tape t;
  const Tensor& y = t.value(relu(t, t.leaf(Tensor({2}, {-1.0, 2.0}))));
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0);

  Tape t2;
  const Tensor& g = t2.value(global_avg_pool(t2, t2.leaf(Tensor::full({1, 1, 3, 3}, 3.0))));
  ASSERT_EQ(g.size(), 1u);
  EXPECT_DOUBLE_EQ(g[0], 3.0);
}

TEST(SoftmaxCe, UniformIsLogTwo) {
  Tape t;
  const ValueId loss = softmax_ce(t, t.leaf(Tensor({1, 2})), {0}, 0.0);
  EXPECT_NEAR(t.value(loss)[0], std::log(2.0), 1e-12);
}

TEST(SoftmaxCe, SaturatedCorrectClass) {
  Tape t;
  const ValueId loss = softmax_ce(t, t.leaf(Tensor({1, 2}, {50.0, 0.0})), {0}, 0.0);
  EXPECT_NEAR(t.value(loss)[0], 0.0, 1e-12);
}

TEST(SoftmaxCe, LabelOutOfRange) {
  Tape t;
  const ValueId logits = t.leaf(Tensor({1, 3}));
  EXPECT_THROW(softmax_ce(t, logits, {3}, 0.0), std::out_of_range);
  EXPECT_THROW(softmax_ce(t, logits, {-1}, 0.0), std::out_of_range);
}

TEST(SoftmaxCe, SmoothingMatchesHandComputation) {
  // two classes, eps = 0.2: targets 0.8 on the label, 0.2 off
  Tensor logits({1, 2}, {1.0, -1.0});
  const double eps = 0.2;
  Tape t;
  const double loss = t.value(softmax_ce(t, t.leaf(logits), {0}, eps))[0];
  const double z = std::exp(1.0) + std::exp(-1.0);
  const double expected = -(1.0 - eps) * std::log(std::exp(1.0) / z) - eps * std::log(std::exp(-1.0) / z);
  EXPECT_NEAR(loss, expected, 1e-12);
}

TEST(FiniteDiff, SumOfSquares) {
  const Tensor x({2}, {1.0, 2.0});
  auto f = [](const Tensor& v) {
    double s = 0.0;
    for (double e : v.data()) s += e * e;
    return s;
  };
  const Tensor g = finite_diff_grad(f, x, 1e-5);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDiff, ConstantFunction) {
  const Tensor g = finite_diff_grad([](const Tensor&) { return 3.0; }, Tensor({4}), 1e-5);
  for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff_grad([](const Tensor&) { return 0.0; }, Tensor({1}), 0.0), config_error);
}

TEST(FiniteDiff, CompositeMatchesTape) {
  std::mt19937_64 rng(5);
  Tensor logits = random_tensor({2, 4}, rng);
  const std::vector<int> labels{1, 3};
  Tape t;
  const ValueId lid = t.leaf(logits);
  t.backward(softmax_ce(t, lid, labels, 0.0));
  auto f = [&labels](const Tensor& x) {
    Tape tp;
    return tp.value(softmax_ce(tp, tp.leaf(x), labels, 0.0))[0];
  };
  const Tensor fd = finite_diff_grad(f, logits, 1e-5);
  EXPECT_LT(max_rel_error(t.grad(lid), fd), 1e-6);
}

// The full oracle suite, every differentiable op against central differences.
TEST(GradCheck, FullSuite) {
  for (const auto& r : gradcheck_suite(/*seed=*/42, /*instances=*/5)) {
    EXPECT_TRUE(r.pass(1e-5)) << r.op << " max rel err " << r.max_rel_err;
  }
}

TEST(Tape, BackwardIsDeterministic) {
  std::mt19937_64 rng(23);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w = random_tensor({3, 2}, rng);
  auto run = [&] {
    Tape t;
    const ValueId wid = t.leaf(w);
    const ValueId y = linear(t, t.leaf(x), wid);
    t.backward(softmax_ce(t, y, {0, 1, 0, 1}, 0.1));
    return t.grad(wid);
  };
  const Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape t;
  const ValueId x = t.leaf(Tensor({2, 2}));
  EXPECT_THROW(t.backward(x), shape_error);
}
