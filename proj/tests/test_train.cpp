#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace mtbca;
using namespace testing_support;

namespace {

FeatureSet random_features(std::size_t n, std::size_t classes, std::size_t t, std::size_t f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  FeatureSet fs;
  for (std::size_t i = 0; i < n; ++i) {
    audio::FeatureTensor ft{t, f, std::vector<float>(2 * t * f), 0.0f, 1.0f};
    const int label = static_cast<int>(i % classes);
    // a class-dependent stripe makes the problem learnable
    for (std::size_t k = 0; k < ft.values.size(); ++k)
      ft.values[k] = 0.3f * g(rng) + ((k % f) == static_cast<std::size_t>(label) * 3 ? 2.0f : 0.0f);
    fs.add(ft, label);
  }
  return fs;
}

ModelConfig tiny_model(std::size_t classes = 3) {
  ModelConfig c;
  c.input_t = 16;
  c.input_f = 16;
  c.num_classes = classes;
  return c;
}

}  // namespace

TEST(CrossEntropy, CertainPredictionIsZero) {
  Tensor<double> logits(Shape{1, 3}, std::vector<double>{-800.0, 800.0, -800.0});
  const std::vector<int> y{1};
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(y)).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tensor<double> logits(Shape{2, 27}, 0.7);
  const std::vector<int> y{4, 26};
  EXPECT_NEAR(cross_entropy(logits, std::span<const int>(y)).item(), std::log(27.0), 1e-12);
}

TEST(CrossEntropy, MatchesDirectFormulaAndGradCheck) {
  for (int s = 0; s < 10; ++s) {
    std::mt19937_64 rng(s);
    auto logits = random_tensor(Shape{5, 4}, rng, -3, 3);
    std::vector<int> y(5);
    for (int& v : y) v = static_cast<int>(rng() % 4);
    double ref = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      double z = 0;
      for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits.data()[i * 4 + c]);
      for (std::size_t c = 0; c < 4; ++c) {
        const double onehot = static_cast<int>(c) == y[i] ? 1.0 : 0.0;
        ref -= onehot * std::log(std::exp(logits.data()[i * 4 + c]) / z);
      }
    }
    EXPECT_NEAR(cross_entropy(logits, std::span<const int>(y)).item(), ref / 5, 1e-6);
    auto r = gradcheck([&] { return cross_entropy(logits, std::span<const int>(y)); }, {logits});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(CrossEntropy, BadLabelsThrow) {
  Tensor<double> logits(Shape{2, 3}, 0.0);
  const std::vector<int> bad{0, 3}, neg{-1, 0}, short_{0};
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(bad)), DataError);
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(neg)), DataError);
  EXPECT_THROW(cross_entropy(logits, std::span<const int>(short_)), DimensionError);
}

TEST(Mse, Examples) {
  std::mt19937_64 rng(2);
  auto a = random_tensor(Shape{2, 2, 3, 3}, rng);
  EXPECT_EQ(mse_recon(a, a.detach()).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_recon(Tensor<double>(Shape{4, 5}, 1.0), Tensor<double>(Shape{4, 5}, 0.0)).item(), 1.0);
  auto b = random_tensor(Shape{2, 2, 3, 3}, rng);
  double ref = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ref += std::pow(b.data()[i] - a.data()[i], 2);
  EXPECT_NEAR(mse_recon(a, b).item(), ref / a.size(), 1e-15);
  auto r = gradcheck([&] { return mse_recon(a, b); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(UncertaintyLoss, UnitRhoHalvesLosses) {
  auto uw = UncertaintyWeights<double>::init();
  auto l1 = Tensor<double>::scalar(1.7), l2 = Tensor<double>::scalar(0.4);
  EXPECT_NEAR(total_loss(l1, l2, uw).item(), 1.7 / 2 + 0.4 / 2, 1e-15);
}

TEST(UncertaintyLoss, DerivativeInS) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-2, 2), pos(0.1, 3);
  for (int s = 0; s < 10; ++s) {
    auto uw = UncertaintyWeights<double>::init(d(rng), d(rng));
    const double L1 = pos(rng), L2 = pos(rng);
    auto l1 = Tensor<double>::scalar(L1), l2 = Tensor<double>::scalar(L2);
    total_loss(l1, l2, uw).backward();
    EXPECT_NEAR(uw.s_cls.grad()[0], 0.5 * (1 - std::exp(-uw.s_cls.item()) * L1), 1e-14);
    EXPECT_NEAR(uw.s_recon.grad()[0], 0.5 * (1 - std::exp(-uw.s_recon.item()) * L2), 1e-14);
    auto r = gradcheck([&] { return total_loss(l1, l2, uw); }, {uw.s_cls, uw.s_recon});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
  auto at = UncertaintyWeights<double>::init(std::log(2.0), 0.0);
  auto l1 = Tensor<double>::scalar(2.0), l2 = Tensor<double>::scalar(1.0);
  total_loss(l1, l2, at).backward();
  EXPECT_NEAR(at.s_cls.grad()[0], 0.0, 1e-15);
}

TEST(UncertaintyLoss, LambdaIsHalfInverseRhoSquared) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-4, 4);
  for (int i = 0; i < 20; ++i) {
    const double s = d(rng);
    EXPECT_DOUBLE_EQ(UncertaintyWeights<double>::lambda(s), 1.0 / (2.0 * std::exp(s)));
    const double rho = UncertaintyWeights<double>::rho(s);
    EXPECT_GT(rho * rho, 0.0);
    EXPECT_NEAR(rho * rho, std::exp(s), 1e-12 * std::exp(s));
  }
}

TEST(UncertaintyLoss, StationaryPointUnderAdam) {
  auto uw = UncertaintyWeights<double>::init();
  std::vector<Tensor<double>> ps{uw.s_cls, uw.s_recon};
  AdamState<double> st;
  st.learning_rate = 0.01;
  auto l1 = Tensor<double>::scalar(2.0), l2 = Tensor<double>::scalar(0.5);
  for (int i = 0; i < 3000; ++i) {
    uw.s_cls.zero_grad();
    uw.s_recon.zero_grad();
    total_loss(l1, l2, uw).backward();
    adam_step(std::span<Tensor<double>>(ps), st);
  }
  EXPECT_NEAR(std::exp(uw.s_cls.item()), 2.0, 1e-3);
  EXPECT_NEAR(std::exp(uw.s_recon.item()), 0.5, 1e-3);
}

TEST(Schedule, StepDecay) {
  TrainConfig tc;
  EXPECT_EQ(lr_schedule(0, tc), 1e-3);
  EXPECT_EQ(lr_schedule(29, tc), 1e-3);
  EXPECT_EQ(lr_schedule(30, tc), 1e-4);
  EXPECT_EQ(lr_schedule(99, tc), 1e-4);
  for (std::size_t e = 0; e <= 100; ++e) EXPECT_EQ(lr_schedule(e, tc), e < 30 ? 1e-3 : 1e-4);
}

TEST(Batches, TrailingSingletonIsMerged) {
  std::vector<std::size_t> order(33);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto b = make_batches(order, 16);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[1].size(), 17u);
  order.resize(34);
  order.back() = 33;
  EXPECT_EQ(make_batches(order, 16).size(), 3u);
}

TEST(TrainConfig, Validation) {
  TrainConfig tc;
  tc.batch_size = 1;
  EXPECT_THROW(tc.validate(), ConfigError);
  TrainConfig d;
  EXPECT_THROW(d.set("weighting", "magic"), ConfigError);
  d.set("weighting", "fixed");
  EXPECT_EQ(d.weighting, LossWeighting::Fixed);
}

TEST(Train, DefaultsFollowPublishedSettings) {
  TrainConfig tc;
  EXPECT_EQ(tc.batch_size, 16u);
  EXPECT_EQ(tc.epochs, 100u);
  EXPECT_EQ(tc.lr_initial, 1e-3);
  EXPECT_EQ(tc.lr_after, 1e-4);
  EXPECT_EQ(tc.lr_decay_epoch, 30u);
}

TEST(Train, SameSeedBitIdenticalHistory) {
  auto data = random_features(12, 3, 16, 16, 1);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 7;
  auto a = train(tiny_model(), data, tc), b = train(tiny_model(), data, tc);
  ASSERT_EQ(a.history.epochs.size(), 3u);
  EXPECT_EQ(a.history.to_csv(), b.history.to_csv());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.history.epochs[i].total, b.history.epochs[i].total);
  tc.seed = 8;
  auto c = train(tiny_model(), data, tc);
  EXPECT_NE(a.history.to_csv(), c.history.to_csv());
}

TEST(Train, HistoryCsvLayout) {
  auto data = random_features(6, 3, 16, 16, 2);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 3;
  std::vector<std::size_t> seen;
  auto r = train(tiny_model(), data, tc, [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1}));
  const auto csv = r.history.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,L1,L2,L_total,acc,rho_cls,rho_recon,lr");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Train, ClassifyOnlyHasNoReconLoss) {
  auto data = random_features(6, 3, 16, 16, 3);
  auto cfg = tiny_model();
  cfg.enable_reconstruction = false;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 3;
  auto r = train(cfg, data, tc);
  EXPECT_EQ(r.history.epochs[0].l2, 0.0);
  EXPECT_EQ(r.history.epochs[0].total, r.history.epochs[0].l1);
}

TEST(Train, RejectsMismatchedOrTinyData) {
  auto data = random_features(6, 3, 16, 16, 4);
  TrainConfig tc;
  tc.epochs = 1;
  auto cfg = tiny_model();
  cfg.input_f = 32;
  EXPECT_THROW(train(cfg, data, tc), ConfigError);
  auto one = random_features(1, 1, 16, 16, 5);
  EXPECT_THROW(train(tiny_model(), one, tc), DataError);
}

TEST(Train, DivergenceReportsContext) {
  auto data = random_features(6, 3, 16, 16, 6);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 3;
  tc.lr_initial = 1e30;
  tc.lr_after = 1e30;
  tc.weighting = LossWeighting::Fixed;
  tc.lambda1 = 1e30;
  try {
    train(tiny_model(), data, tc);
    SUCCEED() << "huge learning rate stayed finite";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 0"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
}

TEST(Train, FixedWeightingLeavesUncertaintyAlone) {
  auto data = random_features(8, 2, 16, 16, 12);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.weighting = LossWeighting::Fixed;
  tc.lambda1 = 0.5;
  auto res = train(tiny_model(), data, tc);
  ASSERT_TRUE(res.params.uncertainty.has_value());
  EXPECT_EQ(res.params.uncertainty->s_cls.item(), 0.0f);
  EXPECT_EQ(res.params.uncertainty->s_recon.item(), 0.0f);
  for (const auto& r : res.history.epochs) EXPECT_NEAR(r.total, r.l1 + 0.5 * r.l2, 1e-5 * r.total);
}

TEST(Train, LearnsSeparableToyProblem) {
  auto data = random_features(24, 3, 16, 16, 9);
  TrainConfig tc;
  tc.epochs = 25;
  tc.batch_size = 8;
  auto r = train(tiny_model(), data, tc);
  auto pred = predict(r.params, tiny_model(), data);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == data.labels[i];
  EXPECT_GE(ok, 22u);
  auto proba = predict_proba(r.params, tiny_model(), data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += proba[i * 3 + c];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}
