#include <gtest/gtest.h>

#include <array>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace mtbca;
using testing_support::probe;
using testing_support::random_tensor;

namespace {

constexpr int kSeeds = 10;

// Runs `build(rng)` for ten seeds; each call returns (loss closure, inputs).
template <typename Build>
void check_grad_over_seeds(Build build, double tol = 1e-4) {
  for (int s = 0; s < kSeeds; ++s) {
    std::mt19937_64 rng(1000 + s);
    auto [loss, inputs] = build(rng, s);
    const auto r = gradcheck(loss, inputs);
    EXPECT_LT(r.max_rel_error, tol) << "seed " << s << ": " << r.worst;
  }
}

using LossFn = std::function<Tensor<double>()>;
using Inputs = std::vector<Tensor<double>>;

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor<double>(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  Tensor<double> t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(numel(t.shape()), t.data().size());
}

TEST(Tensor, GradHasDataShapeAndAccumulates) {
  auto x = Tensor<double>(Shape{3}, std::vector<double>{1, 2, 3}).set_requires_grad(true);
  sum(mul(x, x)).backward();
  ASSERT_EQ(x.grad().size(), x.size());
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
  sum(x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[2], 7.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, BackwardNeedsScalar) {
  auto x = Tensor<double>(Shape{2}, 1.0).set_requires_grad(true);
  EXPECT_THROW(mul_scalar(x, 2.0).backward(), UsageError);
}

TEST(Tensor, NonFiniteForwardIsAnError) {
  auto x = Tensor<double>(Shape{1}, std::vector<double>{-1.0});
  EXPECT_THROW(log(x), NumericError);
}

TEST(Tensor, NoGradGuardDetachesResults) {
  auto x = Tensor<double>(Shape{2}, 1.0).set_requires_grad(true);
  NoGradGuard g;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Tensor, SharedSubexpressionGetsBothPaths) {
  auto x = Tensor<double>::scalar(3.0).set_requires_grad(true);
  auto y = mul(x, x);
  add(y, y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  auto s = softmax(Tensor<double>(Shape{1, 3}, 0.0), 1);
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Ops, SoftmaxRowsSumToOneForLargeLogits) {
  auto s = softmax(Tensor<double>(Shape{2, 3}, std::vector<double>{1000, 0, -1000, 5, 5, 5}), 1);
  EXPECT_NEAR(s.data()[0], 1.0, 1e-12);
  EXPECT_NEAR(s.data()[3] + s.data()[4] + s.data()[5], 1.0, 1e-12);
}

TEST(Ops, SigmoidOfZeroIsHalf) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor<double>::scalar(0.0)).item(), 0.5);
  EXPECT_NEAR(sigmoid(Tensor<double>::scalar(-800.0)).item(), 0.0, 1e-300);
}

TEST(Ops, DropoutZeroIsIdentityAndEvalIsIdentity) {
  std::mt19937_64 rng(3);
  auto x = random_tensor(Shape{4, 5}, rng);
  auto a = dropout(x, 0.0, true, 9);
  auto b = dropout(x, 0.5, false, 9);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(a.data()[i], x.data()[i]);
    EXPECT_EQ(b.data()[i], x.data()[i]);
  }
}

TEST(Ops, DropoutIsUnbiasedMonteCarlo) {
  std::mt19937_64 rng(5);
  auto x = random_tensor(Shape{8}, rng, 0.5, 2.0, false);
  std::vector<double> acc(x.size(), 0.0);
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    auto y = dropout(x, 0.5, true, static_cast<std::uint64_t>(s));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += y.data()[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(acc[i] / n, x.data()[i], 0.02 * x.data()[i] + 0.02);
}

TEST(Ops, DropoutRejectsBadProbability) {
  Tensor<double> x(Shape{2}, 1.0);
  EXPECT_THROW(dropout(x, 1.0, true, 0), ConfigError);
  EXPECT_THROW(dropout(x, -0.1, true, 0), ConfigError);
}

TEST(Ops, MeanOverMatchesLoops) {
  std::mt19937_64 rng(11);
  auto x = random_tensor(Shape{2, 3, 4, 5}, rng);
  auto m = mean_over(x, {1, 2});
  ASSERT_EQ(m.shape(), (Shape{2, 5}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t f = 0; f < 5; ++f) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t t = 0; t < 4; ++t) s += x.data()[((b * 3 + c) * 4 + t) * 5 + f];
      EXPECT_NEAR(m.data()[b * 5 + f], s / 12.0, 1e-14);
    }
}

TEST(Ops, AffineMatchesLoops) {
  std::mt19937_64 rng(12);
  auto x = random_tensor(Shape{3, 4}, rng);
  auto w = random_tensor(Shape{2, 4}, rng);
  auto b = random_tensor(Shape{2}, rng);
  auto y = affine(x, w, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = b.data()[o];
      for (std::size_t k = 0; k < 4; ++k) s += x.data()[i * 4 + k] * w.data()[o * 4 + k];
      EXPECT_NEAR(y.data()[i * 2 + o], s, 1e-14);
    }
}

TEST(Ops, MatmulDegenerateDimsMatchLoops) {
  std::mt19937_64 rng(31);
  for (auto [M, K, N] : {std::array<std::size_t, 3>{1, 5, 3}, {4, 1, 3}, {4, 5, 1}, {1, 1, 1}, {1, 7, 1}}) {
    auto a = random_tensor(Shape{M, K}, rng), b = random_tensor(Shape{K, N}, rng);
    auto y = matmul(a, b);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        double ref = 0;
        for (std::size_t k = 0; k < K; ++k) ref += a.data()[i * K + k] * b.data()[k * N + j];
        EXPECT_NEAR(y.data()[i * N + j], ref, 1e-12);
      }
    LossFn f = [=] { return probe(matmul(a, b), M * 100 + K * 10 + N); };
    EXPECT_LT(gradcheck(f, {a, b}).max_rel_error, 1e-6) << M << "x" << K << "x" << N;
  }
}

TEST(Ops, ShapeMismatchThrows) {
  Tensor<double> a(Shape{2, 3}), b(Shape{3, 2});
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(matmul(a, a), DimensionError);
  EXPECT_THROW(affine(a, Tensor<double>(Shape{4, 2}), Tensor<double>(Shape{4})), DimensionError);
}

TEST(GradCheck, Elementwise) {
  check_grad_over_seeds([](std::mt19937_64& rng, int s) {
    auto a = random_tensor(Shape{3, 4}, rng);
    auto b = random_tensor(Shape{3, 4}, rng);
    auto p = random_tensor(Shape{3, 4}, rng, 0.2, 2.0);
    LossFn f = [=] {
      auto y = add(mul(sigmoid(a), b), sub(exp(mul_scalar(b, 0.5)), log(p)));
      y = add(y, relu(add_scalar(neg(a), 0.1)));
      return probe(y, 77 + s);
    };
    return std::pair{f, Inputs{a, b, p}};
  });
}

TEST(GradCheck, ReductionsAndReshape) {
  check_grad_over_seeds([](std::mt19937_64& rng, int s) {
    auto x = random_tensor(Shape{2, 3, 4, 5}, rng);
    LossFn f = [=] {
      auto m = mean_over(x, {0, 2});
      auto r = reshape(x, Shape{6, 20});
      return add(probe(m, s), add(mul(mean(r), sum(m)), probe(mean_over(r, {1}), s + 1)));
    };
    return std::pair{f, Inputs{x}};
  });
}

TEST(GradCheck, MatmulAffineSoftmax) {
  check_grad_over_seeds([](std::mt19937_64& rng, int s) {
    auto x = random_tensor(Shape{3, 5}, rng);
    auto w = random_tensor(Shape{4, 5}, rng);
    auto b = random_tensor(Shape{4}, rng);
    auto m = random_tensor(Shape{4, 6}, rng);
    LossFn f = [=] {
      auto z = softmax(affine(x, w, b), 1);
      return probe(softmax(matmul(z, m), 0), 5 + s);
    };
    return std::pair{f, Inputs{x, w, b, m}};
  });
}

TEST(GradCheck, ScalingAndDropout) {
  check_grad_over_seeds([](std::mt19937_64& rng, int s) {
    auto x = random_tensor(Shape{2, 3, 4, 5}, rng);
    auto cw = random_tensor(Shape{2, 3}, rng);
    auto fw = random_tensor(Shape{2, 5}, rng);
    LossFn f = [=] {
      auto y = scale_last_axis(scale_channels(x, cw), fw);
      return probe(dropout(y, 0.3, true, 100 + s), s);
    };
    return std::pair{f, Inputs{x, cw, fw}};
  });
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = Tensor<double>::scalar(1.0).set_requires_grad(true);
  p.mutable_grad()[0] = 1.0;
  AdamState<double> st;
  std::vector<Tensor<double>> ps{p};
  adam_step(std::span<Tensor<double>>(ps), st);
  // m_hat = 1, v_hat = 1: the step is lr / (1 + eps).
  EXPECT_NEAR(p.item(), 1.0 - 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  auto p = Tensor<double>::scalar(0.7).set_requires_grad(true);
  p.mutable_grad()[0] = 0.0;
  AdamState<double> st;
  std::vector<Tensor<double>> ps{p};
  for (int i = 0; i < 5; ++i) adam_step(std::span<Tensor<double>>(ps), st);
  EXPECT_EQ(p.item(), 0.7);
  EXPECT_EQ(st.step_count, 5u);
}

TEST(Adam, QuadraticDescent) {
  auto p = Tensor<double>::scalar(1.0).set_requires_grad(true);
  AdamState<double> st;
  st.learning_rate = 0.01;
  std::vector<Tensor<double>> ps{p};
  for (int i = 0; i < 500; ++i) {
    p.zero_grad();
    mul(p, p).backward();
    adam_step(std::span<Tensor<double>>(ps), st);
  }
  EXPECT_LT(std::abs(p.item()), 0.05);
}

TEST(Adam, MissingGradientIsOptimizerError) {
  auto p = Tensor<double>::scalar(1.0).set_requires_grad(true);
  AdamState<double> st;
  std::vector<Tensor<double>> ps{p};
  EXPECT_THROW(adam_step(std::span<Tensor<double>>(ps), st), OptimizerError);
}
