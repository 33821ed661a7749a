#pragma once

#include <cmath>
#include <vector>

#include "mtbca/tensor.hpp"

namespace mtbca {

enum class Mode { Train, Eval };

/// Running statistics of a BatchNorm2D layer.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels, double momentum_ = 0.1, double epsilon_ = 1e-5)
      : running_mean(channels, T(0)), running_var(channels, T(1)), momentum(momentum_), epsilon(epsilon_) {}

  std::size_t channels() const { return running_mean.size(); }
};

/// Per-channel batch normalization of [B,C,H,W]. Train mode normalizes by the
/// biased batch variance and folds the unbiased one into the running
/// statistics; eval mode uses the running statistics.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta_shift,
                      BatchNormState<T>& state, Mode mode) {
  require_rank(input, 4, "batchnorm2d input");
  const std::size_t B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  require_shape(gamma, Shape{C}, "batchnorm2d gamma");
  require_shape(beta_shift, Shape{C}, "batchnorm2d beta_shift");
  if (state.channels() != C) {
    throw DimensionError("batchnorm2d: state has " + std::to_string(state.channels()) + " channels, input has " +
                         std::to_string(C));
  }
  const std::size_t N = B * HW;
  const bool train = mode == Mode::Train;
  if (train && N < 2) {
    throw DimensionError("batchnorm2d: degenerate batch, B*H*W = " + std::to_string(N) + " < 2 in train mode");
  }
  auto x = input.data();
  const T eps = static_cast<T>(state.epsilon);
  std::vector<T> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (train) {
      T s = T(0);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) s += x[(b * C + c) * HW + i];
      const T m = s / static_cast<T>(N);
      T v = T(0);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const T d = x[(b * C + c) * HW + i] - m;
          v += d * d;
        }
      const T var = v / static_cast<T>(N);
      mean[c] = m;
      inv_std[c] = T(1) / std::sqrt(var + eps);
      const T mom = static_cast<T>(state.momentum);
      state.running_mean[c] = (T(1) - mom) * state.running_mean[c] + mom * m;
      state.running_var[c] = (T(1) - mom) * state.running_var[c] + mom * (v / static_cast<T>(N - 1));
    } else {
      mean[c] = state.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(state.running_var[c] + eps);
    }
  }

  std::vector<T> xhat(x.size()), y(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * HW;
      const T g = gamma.data()[c], sh = beta_shift.data()[c];
      for (std::size_t i = 0; i < HW; ++i) {
        xhat[base + i] = (x[base + i] - mean[c]) * inv_std[c];
        y[base + i] = g * xhat[base + i] + sh;
      }
    }
  return detail::make_result<T>(
      "batchnorm2d", input.shape(), std::move(y), {&input, &gamma, &beta_shift},
      [xn = input.node(), gn = gamma.node(), bn = beta_shift.node(), xhat = std::move(xhat),
       inv_std = std::move(inv_std), B, C, HW, N, train](detail::Node<T>& out) {
        T* gx = detail::grad_of(xn);
        T* gg = detail::grad_of(gn);
        T* gb = detail::grad_of(bn);
        const auto& dy = out.grad;
        for (std::size_t c = 0; c < C; ++c) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              sum_dy += dy[k];
              sum_dy_xhat += dy[k] * xhat[k];
            }
          if (gg) gg[c] += sum_dy_xhat;
          if (gb) gb[c] += sum_dy;
          if (!gx) continue;
          const T scale = gn->data[c] * inv_std[c];
          const T n = static_cast<T>(N);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t k = (b * C + c) * HW + i;
              gx[k] += train ? scale * (dy[k] - sum_dy / n - xhat[k] * sum_dy_xhat / n) : scale * dy[k];
            }
        }
      });
}

}  // namespace mtbca
