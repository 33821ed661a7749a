#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace mtbca;
using namespace testing_support;

namespace {

using LossFn = std::function<Tensor<double>()>;

double gauss(double d, double omega) {
  return std::exp(-d * d / (2 * omega * omega)) / (omega * std::sqrt(2 * std::numbers::pi));
}

FrequencyAttentionParams<double> random_fa(std::size_t f, std::mt19937_64& rng, double omega = 1.3) {
  FrequencyAttentionParams<double> p{random_tensor(Shape{f, f}, rng), random_tensor(Shape{f}, rng),
                                     Tensor<double>::scalar(omega)};
  p.omega.set_requires_grad(true);
  return p;
}

ChannelAttentionParams<double> random_ca(std::size_t c, std::size_t r, std::mt19937_64& rng) {
  const std::size_t h = channel_attention_hidden(c, r);
  return {random_tensor(Shape{h, c}, rng), random_tensor(Shape{h}, rng), random_tensor(Shape{c, h}, rng),
          random_tensor(Shape{c}, rng), r};
}

}  // namespace

TEST(Gaussian, SingleEntry) {
  for (double w : {0.3, 1.0, 4.0}) {
    auto g = gaussian_smoothing_matrix(1, w);
    EXPECT_NEAR(g(0, 0), 1.0 / (w * std::sqrt(2 * std::numbers::pi)), 1e-15);
  }
}

TEST(Gaussian, SymmetricAndDecaying) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> om(0.2, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t S = 1 + rng() % 40;
    auto g = gaussian_smoothing_matrix(S, om(rng));
    for (std::size_t m = 0; m < S; ++m)
      for (std::size_t j = 0; j < S; ++j) {
        EXPECT_EQ(g(m, j), g(j, m));
        EXPECT_LE(g(m, j), g(m, m));
        if (j > m) EXPECT_LE(g(m, j), g(m, j - 1));
      }
  }
}

TEST(Gaussian, NeighbourRatio) {
  auto g = gaussian_smoothing_matrix(3, 1.0);
  EXPECT_NEAR(g(0, 1) / g(0, 0), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(g(1, 1), gauss(0, 1), 1e-15);
}

TEST(Gaussian, RejectsBadOmega) {
  EXPECT_THROW(gaussian_smoothing_matrix(4, 0.0), ConfigError);
  EXPECT_THROW(gaussian_smoothing_matrix(4, -1.0), ConfigError);
  EXPECT_THROW(gaussian_smoothing_matrix(0, 1.0), ConfigError);
}

TEST(FrequencyAttention, ZeroScoresGiveFixedProfile) {
  const std::size_t f = 6;
  std::mt19937_64 rng(2);
  auto x = random_tensor(Shape{2, 3, 4, f}, rng, -1, 1, false);
  FrequencyAttentionParams<double> p{Tensor<double>(Shape{f, f}, 0.0), Tensor<double>(Shape{f}, 0.0),
                                     Tensor<double>::scalar(1.0)};
  auto parts = frequency_attention_parts(x, p);
  for (double b : parts.beta.data()) EXPECT_NEAR(b, 1.0 / f, 1e-15);
  for (std::size_t m = 0; m < f; ++m) {
    double g = 0;
    for (std::size_t j = 0; j < f; ++j) g += gauss(double(j) - double(m), 1.0) / f;
    for (std::size_t b = 0; b < 2; ++b) EXPECT_NEAR(parts.smoothed.data()[b * f + m], g, 1e-12);
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(parts.output.data()[i], x.data()[i] * parts.smoothed.data()[(i / (3 * 4 * f)) * f + i % f], 1e-15);
}

TEST(FrequencyAttention, OneHotBetaGivesGaussianColumn) {
  const std::size_t f = 9, j = 3;
  std::mt19937_64 rng(3);
  auto x = random_tensor(Shape{1, 2, 3, f}, rng, 0.5, 1.0, false);
  Tensor<double> bias(Shape{f}, 0.0);
  bias.mutable_data()[j] = 60.0;
  FrequencyAttentionParams<double> p{Tensor<double>(Shape{f, f}, 0.0), bias, Tensor<double>::scalar(1.5)};
  auto parts = frequency_attention_parts(x, p);
  for (std::size_t m = 0; m < f; ++m) EXPECT_NEAR(parts.smoothed.data()[m], gauss(double(m) - double(j), 1.5), 1e-12);
}

TEST(FrequencyAttention, MatchesMatVecOracle) {
  for (int s = 0; s < 10; ++s) {
    std::mt19937_64 rng(50 + s);
    const std::size_t B = 2, C = 3, t = 5, f = 7;
    auto x = random_tensor(Shape{B, C, t, f}, rng, -1, 1, false);
    auto p = random_fa(f, rng, 0.7 + 0.2 * s);
    auto out = frequency_attention(x, p);
    const auto W = p.score_weight.data(), bb = p.score_bias.data();
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> prof(f, 0.0), z(f), beta(f), g(f, 0.0);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t k = 0; k < f; ++k) prof[k] += x.data()[((b * C + c) * t + i) * f + k] / double(C * t);
      double zmax = -1e300, zs = 0;
      for (std::size_t k = 0; k < f; ++k) {
        z[k] = bb[k];
        for (std::size_t q = 0; q < f; ++q) z[k] += W[k * f + q] * prof[q];
        zmax = std::max(zmax, z[k]);
      }
      for (std::size_t k = 0; k < f; ++k) zs += beta[k] = std::exp(z[k] - zmax);
      for (double& v : beta) v /= zs;
      for (std::size_t m = 0; m < f; ++m)
        for (std::size_t k = 0; k < f; ++k) g[m] += gauss(double(k) - double(m), p.omega.item()) * beta[k];
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < t; ++i)
          for (std::size_t k = 0; k < f; ++k) {
            const std::size_t idx = ((b * C + c) * t + i) * f + k;
            EXPECT_NEAR(out.data()[idx], x.data()[idx] * g[k], 1e-6);
          }
    }
  }
}

TEST(FrequencyAttention, GradCheckIncludingOmega) {
  for (int s = 0; s < 10; ++s) {
    std::mt19937_64 rng(70 + s);
    auto x = random_tensor(Shape{2, 3, 4, 6}, rng);
    auto p = random_fa(6, rng, 0.8 + 0.1 * s);
    LossFn f = [=] { return probe(frequency_attention(x, p), s); };
    auto r = gradcheck(f, {x, p.score_weight, p.score_bias, p.omega});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(FrequencyAttention, WrongWidthThrows) {
  std::mt19937_64 rng(4);
  auto p = random_fa(5, rng);
  Tensor<double> x(Shape{1, 1, 2, 6}, 1.0);
  EXPECT_THROW(frequency_attention(x, p), DimensionError);
}

TEST(ChannelAttention, HiddenWidthRule) {
  EXPECT_EQ(channel_attention_hidden(2, 4), 1u);
  EXPECT_EQ(channel_attention_hidden(8, 4), 2u);
  EXPECT_EQ(channel_attention_hidden(64, 4), 16u);
  EXPECT_THROW(channel_attention_hidden(10, 4), ConfigError);
  EXPECT_THROW(channel_attention_hidden(8, 0), ConfigError);
}

TEST(ChannelAttention, ZeroParametersHalveInput) {
  std::mt19937_64 rng(5);
  auto x = random_tensor(Shape{2, 8, 3, 3}, rng, -2, 2, false);
  ChannelAttentionParams<double> p{Tensor<double>(Shape{2, 8}, 0.0), Tensor<double>(Shape{2}, 0.0),
                                   Tensor<double>(Shape{8, 2}, 0.0), Tensor<double>(Shape{8}, 0.0), 4};
  auto y = channel_attention(x, p);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i] / 2);
}

TEST(ChannelAttention, OutputNeverExceedsInputMagnitude) {
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 rng(90 + s);
    auto x = random_tensor(Shape{2, 4, 3, 5}, rng, -5, 5, false);
    auto p = random_ca(4, 4, rng);
    auto y = channel_attention(x, p);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(y.data()[i]), std::abs(x.data()[i]));
  }
}

TEST(ChannelAttention, MatchesStepByStepTranscription) {
  for (int s = 0; s < 10; ++s) {
    std::mt19937_64 rng(110 + s);
    const std::size_t B = 2, C = 8, H = 3, W = 4, h = 2;
    auto x = random_tensor(Shape{B, C, H, W}, rng, -1, 1, false);
    auto p = random_ca(C, 4, rng);
    auto y = channel_attention(x, p);
    auto W1 = p.fc1_weight.data(), b1 = p.fc1_bias.data(), W2 = p.fc2_weight.data(), b2 = p.fc2_bias.data();
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> avg(C, 0.0), mx(C, -1e300);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H * W; ++i) {
          const double v = x.data()[(b * C + c) * H * W + i];
          avg[c] += v / double(H * W);
          mx[c] = std::max(mx[c], v);
        }
      std::vector<double> hid(h);
      for (std::size_t k = 0; k < h; ++k) {
        double za = b1[k], zm = b1[k];
        for (std::size_t c = 0; c < C; ++c) {
          za += W1[k * C + c] * avg[c];
          zm += W1[k * C + c] * mx[c];
        }
        hid[k] = std::max(0.0, za + zm);
      }
      for (std::size_t c = 0; c < C; ++c) {
        double z = b2[c];
        for (std::size_t k = 0; k < h; ++k) z += W2[c * h + k] * hid[k];
        const double aw = 1.0 / (1.0 + std::exp(-z));
        for (std::size_t i = 0; i < H * W; ++i) {
          const std::size_t idx = (b * C + c) * H * W + i;
          EXPECT_NEAR(y.data()[idx], aw * x.data()[idx], 1e-12);
        }
      }
    }
  }
}

TEST(ChannelAttention, GradCheck) {
  for (int s = 0; s < 10; ++s) {
    std::mt19937_64 rng(130 + s);
    const std::size_t C = s % 2 == 0 ? 8 : 2;
    auto x = random_tensor(Shape{2, C, 3, 4}, rng);
    auto p = random_ca(C, 4, rng);
    LossFn f = [=] { return probe(channel_attention(x, p), s); };
    auto r = gradcheck(f, {x, p.fc1_weight, p.fc1_bias, p.fc2_weight, p.fc2_bias});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}
