#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "mtbca/init.hpp"
#include "mtbca/ops.hpp"

namespace mtbca {

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(B));
  }
  for (std::size_t b = 0; b < B; ++b)
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C) {
      throw DataError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(C) + ")");
    }
  auto x = logits.data();
  std::vector<T> prob(B * C);
  T loss = T(0);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = x.data() + b * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (std::size_t c = 0; c < C; ++c) z += (prob[b * C + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < C; ++c) prob[b * C + c] /= z;
    loss += std::log(z) + mx - row[labels[b]];
  }
  loss /= static_cast<T>(B);
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::make_result<T>("cross_entropy", Shape{1}, {loss}, {&logits},
                                [ln = logits.node(), prob = std::move(prob), lab = std::move(lab), B,
                                 C](detail::Node<T>& out) {
                                  T* g = detail::grad_of(ln);
                                  const T s = out.grad[0] / static_cast<T>(B);
                                  for (std::size_t b = 0; b < B; ++b)
                                    for (std::size_t c = 0; c < C; ++c) {
                                      const T onehot = static_cast<std::size_t>(lab[b]) == c ? T(1) : T(0);
                                      g[b * C + c] += s * (prob[b * C + c] - onehot);
                                    }
                                });
}

/// Mean of squared differences over every element.
template <typename T>
Tensor<T> mse_recon(const Tensor<T>& recon, const Tensor<T>& target) {
  if (recon.shape() != target.shape()) {
    throw DimensionError("mse_recon: reconstruction " + shape_str(recon.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const std::size_t n = recon.size();
  T s = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T d = recon.data()[i] - target.data()[i];
    s += d * d;
  }
  return detail::make_result<T>("mse_recon", Shape{1}, {s / static_cast<T>(n)}, {&recon, &target},
                                [rn = recon.node(), tn = target.node(), n](detail::Node<T>& out) {
                                  const T k = T(2) * out.grad[0] / static_cast<T>(n);
                                  T* gr = detail::grad_of(rn);
                                  T* gt = detail::grad_of(tn);
                                  for (std::size_t i = 0; i < n; ++i) {
                                    const T d = rn->data[i] - tn->data[i];
                                    if (gr) gr[i] += k * d;
                                    if (gt) gt[i] -= k * d;
                                  }
                                });
}

/// Learned task-noise terms, parameterized as s = log(rho^2).
template <typename T>
struct UncertaintyWeights {
  Tensor<T> s_cls;
  Tensor<T> s_recon;

  static UncertaintyWeights init(T s_cls0 = T(0), T s_recon0 = T(0)) {
    return {param_filled<T>({1}, s_cls0), param_filled<T>({1}, s_recon0)};
  }

  /// lambda = 1 / (2 rho^2) = exp(-s) / 2.
  static double lambda(double s) { return 0.5 * std::exp(-s); }
  static double rho(double s) { return std::exp(0.5 * s); }
  double lambda_cls() const { return lambda(static_cast<double>(s_cls.item())); }
  double lambda_recon() const { return lambda(static_cast<double>(s_recon.item())); }
  double rho_cls() const { return rho(static_cast<double>(s_cls.item())); }
  double rho_recon() const { return rho(static_cast<double>(s_recon.item())); }
};

/// L1 / (2 rho_cls^2) + L2 / (2 rho_recon^2) + log(rho_cls rho_recon), written
/// in s: exp(-s_cls) L1 / 2 + exp(-s_recon) L2 / 2 + (s_cls + s_recon) / 2.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l1, const Tensor<T>& l2, const UncertaintyWeights<T>& uw) {
  auto cls = mul(mul_scalar(exp(neg(uw.s_cls)), T(0.5)), l1);
  auto rec = mul(mul_scalar(exp(neg(uw.s_recon)), T(0.5)), l2);
  auto reg = mul_scalar(add(uw.s_cls, uw.s_recon), T(0.5));
  return add(add(cls, rec), reg);
}

/// Static weighting lambda0 * L1 + lambda1 * L2.
template <typename T>
Tensor<T> total_loss_fixed(const Tensor<T>& l1, const Tensor<T>& l2, T lambda0, T lambda1) {
  return add(mul_scalar(l1, lambda0), mul_scalar(l2, lambda1));
}

}  // namespace mtbca
