#pragma once

// Gaussian-smoothed frequency soft mask and dual-branch (avg + max pooled)
// channel attention.

#include <cmath>
#include <numbers>
#include <vector>

#include "mtbca/conv.hpp"
#include "mtbca/init.hpp"
#include "mtbca/ops.hpp"
#include "mtbca/tensor.hpp"

namespace mtbca {

/// S x S matrix G[m][j] = exp(-(j-m)^2 / (2 omega^2)) / (omega sqrt(2 pi)).
template <typename T = double>
struct GaussianSmoothingMatrix {
  std::size_t size = 0;
  std::vector<T> values;

  T operator()(std::size_t m, std::size_t j) const { return values[m * size + j]; }
};

template <typename T = double>
GaussianSmoothingMatrix<T> gaussian_smoothing_matrix(std::size_t size, double omega) {
  if (size < 1) throw ConfigError("gaussian_smoothing_matrix: size must be >= 1");
  if (!(omega > 0.0) || !std::isfinite(omega)) {
    throw ConfigError("gaussian_smoothing_matrix: omega must be positive, got " + std::to_string(omega));
  }
  GaussianSmoothingMatrix<T> g{size, std::vector<T>(size * size)};
  const double norm = 1.0 / (omega * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t m = 0; m < size; ++m)
    for (std::size_t j = 0; j < size; ++j) {
      const double d = static_cast<double>(j) - static_cast<double>(m);
      g.values[m * size + j] = static_cast<T>(norm * std::exp(-d * d / (2.0 * omega * omega)));
    }
  return g;
}

/// Differentiable form of gaussian_smoothing_matrix in omega ([1] -> [S,S]).
template <typename T>
Tensor<T> gaussian_kernel(const Tensor<T>& omega, std::size_t size) {
  require_shape(omega, Shape{1}, "gaussian_kernel omega");
  const double w = static_cast<double>(omega.item());
  auto g = gaussian_smoothing_matrix<T>(size, w);
  return detail::make_result<T>("gaussian_kernel", Shape{size, size}, std::move(g.values), {&omega},
                                [on = omega.node(), size](detail::Node<T>& out) {
                                  T* go = detail::grad_of(on);
                                  const T om = on->data[0];
                                  T acc = T(0);
                                  for (std::size_t m = 0; m < size; ++m)
                                    for (std::size_t j = 0; j < size; ++j) {
                                      const T d = static_cast<T>(j) - static_cast<T>(m);
                                      const T k = out.data[m * size + j];
                                      acc += out.grad[m * size + j] * k * (d * d / (om * om * om) - T(1) / om);
                                    }
                                  go[0] += acc;
                                });
}

template <typename T>
struct FrequencyAttentionParams {
  Tensor<T> score_weight;  // [f,f]
  Tensor<T> score_bias;    // [f]
  Tensor<T> omega;         // [1], learnable only when omega_trainable

  std::size_t kernel_size() const { return score_bias.size(); }
  bool omega_trainable() const { return omega.requires_grad(); }

  static FrequencyAttentionParams init(std::size_t f, double omega, bool trainable, Rng& rng) {
    if (!(omega > 0.0)) throw ConfigError("frequency attention: omega must be positive");
    FrequencyAttentionParams p{he_uniform<T>({f, f}, f, rng), param_filled<T>({f}, T(0)),
                               Tensor<T>::scalar(static_cast<T>(omega))};
    p.omega.set_requires_grad(trainable);
    return p;
  }
};

template <typename T>
struct FrequencyAttentionParts {
  Tensor<T> profile;  // [B,f] channel-and-time mean
  Tensor<T> beta;     // [B,f] softmax weights
  Tensor<T> smoothed; // [B,f] G * beta
  Tensor<T> output;   // [B,C,t,f]
};

template <typename T>
FrequencyAttentionParts<T> frequency_attention_parts(const Tensor<T>& x, const FrequencyAttentionParams<T>& p) {
  require_rank(x, 4, "frequency_attention input");
  const std::size_t f = x.dim(3);
  if (f != p.kernel_size()) {
    throw DimensionError("frequency_attention: input has " + std::to_string(f) + " frequency bins, params expect " +
                         std::to_string(p.kernel_size()));
  }
  FrequencyAttentionParts<T> r;
  r.profile = mean_over(x, {1, 2});
  r.beta = softmax(affine(r.profile, p.score_weight, p.score_bias), 1);
  // G is symmetric, so beta * G equals (G * beta^T)^T row by row.
  r.smoothed = matmul(r.beta, gaussian_kernel(p.omega, f));
  r.output = scale_last_axis(x, r.smoothed);
  return r;
}

template <typename T>
Tensor<T> frequency_attention(const Tensor<T>& x, const FrequencyAttentionParams<T>& p) {
  return frequency_attention_parts(x, p).output;
}

/// Hidden width of the channel bottleneck. Channel counts below the reduction
/// factor collapse to a single hidden unit.
inline std::size_t channel_attention_hidden(std::size_t channels, std::size_t reduction) {
  if (channels == 0 || reduction == 0) throw ConfigError("channel attention: channels and reduction must be positive");
  if (channels < reduction) return 1;
  if (channels % reduction != 0) {
    throw ConfigError("channel attention: " + std::to_string(channels) + " channels not divisible by reduction " +
                      std::to_string(reduction));
  }
  return channels / reduction;
}

template <typename T>
struct ChannelAttentionParams {
  Tensor<T> fc1_weight;  // [C/r, C]
  Tensor<T> fc1_bias;    // [C/r]
  Tensor<T> fc2_weight;  // [C, C/r]
  Tensor<T> fc2_bias;    // [C]
  std::size_t reduction = 4;

  std::size_t channels() const { return fc2_bias.size(); }

  static ChannelAttentionParams init(std::size_t channels, std::size_t reduction, Rng& rng) {
    const std::size_t h = channel_attention_hidden(channels, reduction);
    return {he_uniform<T>({h, channels}, channels, rng), param_filled<T>({h}, T(0)),
            he_uniform<T>({channels, h}, h, rng), param_filled<T>({channels}, T(0)), reduction};
  }
};

template <typename T>
struct ChannelAttentionParts {
  Tensor<T> avg;      // [B,C]
  Tensor<T> max;      // [B,C]
  Tensor<T> weights;  // [B,C] in (0,1)
  Tensor<T> output;   // [B,C,H,W]
};

/// aw = sigmoid(fc2(relu(fc1(avg_pool(x)) + fc1(max_pool(x))))), out = aw * x.
template <typename T>
ChannelAttentionParts<T> channel_attention_parts(const Tensor<T>& x, const ChannelAttentionParams<T>& p) {
  require_rank(x, 4, "channel_attention input");
  if (x.dim(1) != p.channels()) {
    throw DimensionError("channel_attention: input has " + std::to_string(x.dim(1)) + " channels, params expect " +
                         std::to_string(p.channels()));
  }
  ChannelAttentionParts<T> r;
  r.avg = global_avg_pool(x);
  r.max = global_max_pool(x);
  auto hidden = relu(add(affine(r.avg, p.fc1_weight, p.fc1_bias), affine(r.max, p.fc1_weight, p.fc1_bias)));
  r.weights = sigmoid(affine(hidden, p.fc2_weight, p.fc2_bias));
  r.output = scale_channels(x, r.weights);
  return r;
}

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const ChannelAttentionParams<T>& p) {
  return channel_attention_parts(x, p).output;
}

}  // namespace mtbca
