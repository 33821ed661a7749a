#pragma once

// Confusion matrix and per-class / macro classification metrics.

#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mtbca/binary_io.hpp"
#include "mtbca/errors.hpp"

namespace mtbca {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::int64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t c) : classes(c), counts(c * c, 0) {}

  std::int64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  std::int64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }
  std::int64_t row_sum(std::size_t r) const {
    std::int64_t s = 0;
    for (std::size_t c = 0; c < classes; ++c) s += at(r, c);
    return s;
  }
  std::int64_t col_sum(std::size_t c) const {
    std::int64_t s = 0;
    for (std::size_t r = 0; r < classes; ++r) s += at(r, c);
    return s;
  }

  /// Matrix addition, for combining partial evaluations.
  void merge(const ConfusionMatrix& o) {
    if (o.classes != classes) throw DimensionError("ConfusionMatrix::merge: class counts differ");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
  }
};

inline ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, std::size_t classes) {
  if (preds.size() != labels.size()) {
    throw DimensionError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], l = labels[i];
    if (p < 0 || l < 0 || static_cast<std::size_t>(p) >= classes || static_cast<std::size_t>(l) >= classes) {
      throw DataError("confusion: sample " + std::to_string(i) + " has label " + std::to_string(l) + " / prediction " +
                      std::to_string(p) + " outside [0, " + std::to_string(classes) + ")");
    }
    ++cm.at(static_cast<std::size_t>(l), static_cast<std::size_t>(p));
  }
  return cm;
}

struct MetricsReport {
  /// One-vs-rest (TP + TN) / total per class.
  std::vector<double> accuracy;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  double macro_f1 = 0.0;
  /// trace / total.
  double overall_accuracy = 0.0;
};

/// Ratios with an empty denominator are 0.
inline MetricsReport metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (cm.classes == 0 || total <= 0) throw DataError("metrics: confusion matrix is empty");
  auto ratio = [](std::int64_t a, std::int64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  MetricsReport r;
  std::int64_t trace = 0;
  for (std::size_t n = 0; n < cm.classes; ++n) {
    const std::int64_t tp = cm.at(n, n);
    const std::int64_t fp = cm.col_sum(n) - tp;
    const std::int64_t fn = cm.row_sum(n) - tp;
    const std::int64_t tn = total - tp - fp - fn;
    trace += tp;
    r.accuracy.push_back(ratio(tp + tn, total));
    r.precision.push_back(ratio(tp, tp + fp));
    r.recall.push_back(ratio(tp, tp + fn));
    r.f1.push_back(ratio(2 * tp, 2 * tp + fp + fn));
  }
  double s = 0.0;
  for (double v : r.f1) s += v;
  r.macro_f1 = s / static_cast<double>(cm.classes);
  r.overall_accuracy = ratio(trace, total);
  return r;
}

/// C rows x C columns with a header row of predicted-class names; the first
/// column of each row holds the true-class name.
inline std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  if (names.size() != cm.classes) throw DimensionError("confusion_csv: class name count differs from matrix size");
  std::ostringstream os;
  os << "true\\pred";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (std::size_t r = 0; r < cm.classes; ++r) {
    os << names[r];
    for (std::size_t c = 0; c < cm.classes; ++c) os << ',' << cm.at(r, c);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json metrics_json(const ConfusionMatrix& cm, const MetricsReport& m,
                                           const std::vector<std::string>& names) {
  if (names.size() != cm.classes) throw DimensionError("metrics_json: class name count differs from matrix size");
  nlohmann::ordered_json j;
  j["overall_accuracy"] = m.overall_accuracy;
  j["macro_f1"] = m.macro_f1;
  j["samples"] = cm.total();
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t n = 0; n < cm.classes; ++n) {
    per.push_back({{"class", names[n]},
                   {"support", cm.row_sum(n)},
                   {"accuracy", m.accuracy[n]},
                   {"precision", m.precision[n]},
                   {"recall", m.recall[n]},
                   {"f1", m.f1[n]}});
  }
  j["per_class"] = per;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < cm.classes; ++r) {
    std::vector<std::int64_t> row(cm.counts.begin() + static_cast<std::ptrdiff_t>(r * cm.classes),
                                  cm.counts.begin() + static_cast<std::ptrdiff_t>((r + 1) * cm.classes));
    rows.push_back(row);
  }
  j["confusion"] = {{"classes", names}, {"counts", rows}};
  return j;
}

}  // namespace mtbca
