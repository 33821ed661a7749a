#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "support.hpp"

using namespace mtbca;
using namespace testing_support;

namespace {

ConfusionMatrix from_counts(const std::vector<std::vector<std::int64_t>>& counts) {
  ConfusionMatrix cm(counts.size());
  for (std::size_t r = 0; r < counts.size(); ++r)
    for (std::size_t c = 0; c < counts.size(); ++c) cm.at(r, c) = counts[r][c];
  return cm;
}

}  // namespace

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  const std::vector<int> y{0, 1, 2, 2, 1};
  auto cm = confusion(y, y, 3);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      if (r != c) EXPECT_EQ(cm.at(r, c), 0);
  EXPECT_EQ(cm.at(2, 2), 2);
  auto m = metrics(cm);
  EXPECT_EQ(m.overall_accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
}

TEST(Confusion, SingleMistake) {
  const std::vector<int> pred{1}, truth{0};
  auto cm = confusion(pred, truth, 2);
  EXPECT_EQ(cm.counts, (std::vector<std::int64_t>{0, 1, 0, 0}));
}

TEST(Confusion, RowSumsAreLabelCounts) {
  std::mt19937_64 rng(1);
  std::vector<int> pred(500), truth(500);
  for (auto& v : pred) v = static_cast<int>(rng() % 7);
  for (auto& v : truth) v = static_cast<int>(rng() % 7);
  auto cm = confusion(pred, truth, 7);
  EXPECT_EQ(cm.total(), 500);
  for (int c = 0; c < 7; ++c) EXPECT_EQ(cm.row_sum(c), std::count(truth.begin(), truth.end(), c));
  for (auto v : cm.counts) EXPECT_GE(v, 0);
}

TEST(Confusion, InvalidInputs) {
  const std::vector<int> a{0, 3}, b{0, 1}, c{0};
  EXPECT_THROW(confusion(a, b, 3), DataError);
  EXPECT_THROW(confusion(b, c, 3), DimensionError);
  EXPECT_THROW(metrics(ConfusionMatrix(3)), DataError);
}

TEST(Metrics, TwoByTwoHalf) {
  auto m = metrics(from_counts({{1, 1}, {1, 1}}));
  for (std::size_t n = 0; n < 2; ++n) {
    EXPECT_EQ(m.precision[n], 0.5);
    EXPECT_EQ(m.recall[n], 0.5);
    EXPECT_EQ(m.f1[n], 0.5);
  }
  EXPECT_EQ(m.macro_f1, 0.5);
  EXPECT_EQ(m.overall_accuracy, 0.5);
}

TEST(Metrics, UnpredictedClassScoresZero) {
  auto m = metrics(from_counts({{3, 0, 0}, {2, 0, 0}, {0, 0, 0}}));
  EXPECT_EQ(m.precision[1], 0.0);
  EXPECT_EQ(m.recall[2], 0.0);
  EXPECT_EQ(m.f1[2], 0.0);
}

TEST(Metrics, MatchesBruteForceOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t C = 2 + rng() % 31;
    auto counts = random_counts(rng, C);
    auto m = metrics(from_counts(counts));
    auto o = brute_force_metrics(counts);
    ASSERT_EQ(m.f1.size(), C);
    for (std::size_t n = 0; n < C; ++n) {
      EXPECT_EQ(m.accuracy[n], o.accuracy[n]);
      EXPECT_EQ(m.precision[n], o.precision[n]);
      EXPECT_EQ(m.recall[n], o.recall[n]);
      EXPECT_EQ(m.f1[n], o.f1[n]);
      EXPECT_GE(m.f1[n], 0.0);
      EXPECT_LE(m.f1[n], 1.0);
    }
    EXPECT_EQ(m.macro_f1, o.macro_f1);
    EXPECT_EQ(m.overall_accuracy, o.overall);
  }
}

TEST(Metrics, RelabellingPermutesPerClassValues) {
  std::mt19937_64 rng(23);
  const std::size_t C = 6;
  auto counts = random_counts(rng, C);
  std::vector<std::size_t> perm(C);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::int64_t>> permuted(C, std::vector<std::int64_t>(C));
  for (std::size_t r = 0; r < C; ++r)
    for (std::size_t c = 0; c < C; ++c) permuted[perm[r]][perm[c]] = counts[r][c];
  auto a = metrics(from_counts(counts)), b = metrics(from_counts(permuted));
  for (std::size_t n = 0; n < C; ++n) EXPECT_EQ(a.f1[n], b.f1[perm[n]]);
  EXPECT_NEAR(a.macro_f1, b.macro_f1, 1e-15);
  EXPECT_EQ(a.overall_accuracy, b.overall_accuracy);
}

TEST(Export, CsvAndJsonLayout) {
  auto cm = from_counts({{2, 1}, {0, 3}});
  const std::vector<std::string> names{"orca", "humpback"};
  const auto csv = confusion_csv(cm, names);
  EXPECT_EQ(csv, "true\\pred,orca,humpback\norca,2,1\nhumpback,0,3\n");
  auto j = metrics_json(cm, metrics(cm), names);
  EXPECT_NEAR(j["overall_accuracy"].get<double>(), 5.0 / 6.0, 1e-15);
  EXPECT_TRUE(j.contains("macro_f1"));
  ASSERT_EQ(j["per_class"].size(), 2u);
  EXPECT_EQ(j["per_class"][1]["class"], "humpback");
  EXPECT_EQ(j["confusion"]["counts"][0][1], 1);
  EXPECT_THROW(confusion_csv(cm, {"one"}), DimensionError);
}
