#pragma once

// Central finite-difference gradient checker. Only forward evaluations are
// used for the numerical side, so it stays independent of every backward
// closure it validates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mtbca/tensor.hpp"

namespace mtbca {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor: errors are |a-n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  /// Coordinates probed per input; all of them when the input is smaller.
  std::size_t max_coords = static_cast<std::size_t>(-1);
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;
};

/// `loss` must rebuild the graph from the current values of `inputs` and
/// return a scalar. Every input must have requires_grad set.
inline GradCheckResult gradcheck(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                                 const GradCheckOptions& opt = {}) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.back().begin());
  }

  GradCheckResult r;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
    }
    for (std::size_t i : coords) {
      const double orig = data[i];
      data[i] = orig + opt.step;
      const double fp = loss().item();
      data[i] = orig - opt.step;
      const double fm = loss().item();
      data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++r.coords_checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = "input #" + std::to_string(k) + " coord " + std::to_string(i) + ": analytic " + std::to_string(a) +
                  " vs numeric " + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace mtbca
