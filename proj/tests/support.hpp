#pragma once

// Shared helpers for the test suite: random tensors and direct-loop oracles
// that do not share code with the library kernels.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <random>
#include <vector>

#include <unistd.h>

#include "mtbca/mtbca.hpp"

namespace testing_support {

using mtbca::Shape;
using mtbca::Tensor;

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(mtbca::numel(shape));
  for (auto& x : v) x = static_cast<T>(d(rng));
  Tensor<T> t(shape, std::move(v));
  t.set_requires_grad(requires_grad);
  return t;
}

/// sum(out * R) for a fixed random R, a scalar whose gradient exercises every
/// output element with a distinct weight.
template <typename T>
Tensor<T> probe(const Tensor<T>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = random_tensor<T>(out.shape(), rng, -1.0, 1.0, false);
  return mtbca::sum(mtbca::mul(out, r));
}

/// Direct 7-loop convolution.
inline std::vector<double> conv2d_ref(const std::vector<double>& x, const Shape& xs, const std::vector<double>& w,
                                      const Shape& ws, const std::vector<double>& b, std::size_t stride,
                                      std::size_t pad, std::size_t& oh, std::size_t& ow) {
  const std::size_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3], Co = ws[0], kh = ws[2], kw = ws[3];
  oh = (H + 2 * pad - kh) / stride + 1;
  ow = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> y(B * Co * oh * ow, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                s += x[((n * Ci + c) * H + r) * W + q] * w[((o * Ci + c) * kh + u) * kw + v];
              }
          y[((n * Co + o) * oh + i) * ow + j] = s;
        }
  return y;
}

/// Transposed convolution by scattering every input pixel through the kernel.
inline std::vector<double> conv_transpose_ref(const std::vector<double>& x, const Shape& xs,
                                              const std::vector<double>& w, const Shape& ws,
                                              const std::vector<double>& b, std::size_t stride, std::size_t pad,
                                              std::size_t& oh, std::size_t& ow) {
  const std::size_t B = xs[0], Ci = xs[1], H = xs[2], W = xs[3], Co = ws[1], kh = ws[2], kw = ws[3];
  oh = (H - 1) * stride + kh - 2 * pad;
  ow = (W - 1) * stride + kw - 2 * pad;
  std::vector<double> y(B * Co * oh * ow, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t i = 0; i < oh * ow; ++i) y[(n * Co + o) * oh * ow + i] = b[o];
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < Ci; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t o = 0; o < Co; ++o)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(oh) || q >= static_cast<long>(ow)) continue;
                y[((n * Co + o) * oh + r) * ow + q] +=
                    x[((n * Ci + c) * H + i) * W + j] * w[((c * Co + o) * kh + u) * kw + v];
              }
  return y;
}

struct OracleMetrics {
  std::vector<double> accuracy, precision, recall, f1;
  double macro_f1 = 0.0, overall = 0.0;
};

/// Per-class counts tallied sample by sample from the expanded (truth, pred)
/// list, then the textbook ratios; a zero denominator yields 0.
inline OracleMetrics brute_force_metrics(const std::vector<std::vector<std::int64_t>>& counts) {
  const std::size_t C = counts.size();
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t r = 0; r < C; ++r)
    for (std::size_t c = 0; c < C; ++c)
      for (std::int64_t k = 0; k < counts[r][c]; ++k) samples.emplace_back(r, c);
  OracleMetrics o;
  std::int64_t correct = 0;
  for (auto [t, p] : samples) correct += t == p;
  const auto N = static_cast<std::int64_t>(samples.size());
  auto div = [](std::int64_t a, std::int64_t b) { return b == 0 ? 0.0 : double(a) / double(b); };
  double f1sum = 0.0;
  for (std::size_t n = 0; n < C; ++n) {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (auto [t, p] : samples) {
      if (t == n && p == n) ++tp;
      else if (t != n && p == n) ++fp;
      else if (t == n && p != n) ++fn;
      else ++tn;
    }
    o.accuracy.push_back(div(tp + tn, tp + tn + fp + fn));
    o.precision.push_back(div(tp, tp + fp));
    o.recall.push_back(div(tp, tp + fn));
    o.f1.push_back(div(2 * tp, 2 * tp + fp + fn));
    f1sum += o.f1.back();
  }
  o.macro_f1 = f1sum / double(C);
  o.overall = div(correct, N);
  return o;
}

/// Random confusion counts; some rows/columns are left empty on purpose.
inline std::vector<std::vector<std::int64_t>> random_counts(std::mt19937_64& rng, std::size_t C) {
  std::vector<std::vector<std::int64_t>> m(C, std::vector<std::int64_t>(C, 0));
  const bool sparse = rng() % 3 == 0;
  std::int64_t total = 0;
  for (auto& row : m)
    for (auto& v : row) {
      v = sparse ? (rng() % 5 == 0 ? std::int64_t(rng() % 4) : 0) : std::int64_t(rng() % 6);
      total += v;
    }
  if (total == 0) m[0][rng() % C] = 1;
  return m;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("mtbca_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::vector<double> to_double(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace testing_support
