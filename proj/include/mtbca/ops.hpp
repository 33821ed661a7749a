#pragma once

// Elementwise, linear and reduction ops with reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "mtbca/gemm.hpp"
#include "mtbca/tensor.hpp"

namespace mtbca {

namespace detail {

template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, DF df) {
  auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result<T>(op, a.shape(), std::move(y), {&a}, [an = a.node(), df](Node<T>& out) {
    T* ga = grad_of(an);
    const auto& xv = an->data;
    for (std::size_t i = 0; i < out.grad.size(); ++i) ga[i] += out.grad[i] * df(xv[i], out.data[i]);
  });
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>("add", a.shape(), std::move(y), {&a, &b},
                                [an = a.node(), bn = b.node()](detail::Node<T>& out) {
                                  if (T* g = detail::grad_of(an))
                                    for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
                                  if (T* g = detail::grad_of(bn))
                                    for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(y), {&a, &b},
                                [an = a.node(), bn = b.node()](detail::Node<T>& out) {
                                  if (T* g = detail::grad_of(an))
                                    for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
                                  if (T* g = detail::grad_of(bn))
                                    for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] -= out.grad[i];
                                });
}

/// Elementwise (Hadamard) product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(y), {&a, &b},
                                [an = a.node(), bn = b.node()](detail::Node<T>& out) {
                                  if (T* g = detail::grad_of(an))
                                    for (std::size_t i = 0; i < out.grad.size(); ++i)
                                      g[i] += out.grad[i] * bn->data[i];
                                  if (T* g = detail::grad_of(bn))
                                    for (std::size_t i = 0; i < out.grad.size(); ++i)
                                      g[i] += out.grad[i] * an->data[i];
                                });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
  return detail::unary<T>("mul_scalar", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  return detail::unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), a.to_vector(), {&a},
                                [an = a.node()](detail::Node<T>& out) {
                                  T* g = detail::grad_of(an);
                                  for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  return detail::make_result<T>("sum", Shape{1}, {s}, {&a}, [an = a.node()](detail::Node<T>& out) {
    T* g = detail::grad_of(an);
    for (std::size_t i = 0; i < an->data.size(); ++i) g[i] += out.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Mean over the listed axes; remaining axes keep their order.
template <typename T>
Tensor<T> mean_over(const Tensor<T>& a, std::vector<std::size_t> axes) {
  const Shape& in = a.shape();
  std::vector<bool> reduce(in.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in.size()) throw DimensionError("mean_over: axis out of range for " + shape_str(in));
    reduce[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduce[d]) {
      count *= in[d];
    } else {
      out_shape.push_back(in[d]);
    }
  }
  if (count == 0) throw DimensionError("mean_over: empty reduction");
  if (out_shape.empty()) out_shape.push_back(1);

  // Output stride for each input axis (0 on reduced axes).
  std::vector<std::size_t> ostride(in.size(), 0);
  for (std::size_t d = in.size(), s = 1; d-- > 0;) {
    if (!reduce[d]) {
      ostride[d] = s;
      s *= in[d];
    }
  }
  auto for_each_index = [in, ostride](auto&& fn) {
    std::vector<std::size_t> idx(in.size(), 0);
    std::size_t o = 0;
    const std::size_t n = numel(in);
    for (std::size_t i = 0; i < n; ++i) {
      fn(i, o);
      for (std::size_t d = in.size(); d-- > 0;) {
        ++idx[d];
        o += ostride[d];
        if (idx[d] < in[d]) break;
        o -= ostride[d] * in[d];
        idx[d] = 0;
      }
    }
  };

  std::vector<T> y(numel(out_shape), T(0));
  auto x = a.data();
  for_each_index([&](std::size_t i, std::size_t o) { y[o] += x[i]; });
  const T inv = T(1) / static_cast<T>(count);
  for (T& v : y) v *= inv;
  return detail::make_result<T>("mean_over", out_shape, std::move(y), {&a},
                                [an = a.node(), for_each_index, inv](detail::Node<T>& out) {
                                  T* g = detail::grad_of(an);
                                  for_each_index([&](std::size_t i, std::size_t o) { g[i] += out.grad[o] * inv; });
                                });
}

/// a[M,K] x b[K,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K) {
    throw DimensionError("matmul: inner dims differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> y(M * N, T(0));
  detail::gemm_acc(M, N, K, a.data().data(), K, 1, b.data().data(), N, y.data(), N);
  return detail::make_result<T>(
      "matmul", Shape{M, N}, std::move(y), {&a, &b}, [an = a.node(), bn = b.node(), M, K, N](detail::Node<T>& out) {
        if (T* ga = detail::grad_of(an)) {
          std::vector<T> bt(N * K);
          detail::transpose(K, N, bn->data.data(), bt.data());
          detail::gemm_acc(M, K, N, out.grad.data(), N, 1, bt.data(), K, ga, K);
        }
        if (T* gb = detail::grad_of(bn)) {
          detail::gemm_acc(K, N, M, an->data.data(), 1, K, out.grad.data(), N, gb, N);
        }
      });
}

/// x[B,in] * weight[out,in]^T + bias[out].
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "affine input");
  require_rank(weight, 2, "affine weight");
  const std::size_t B = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("affine: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  require_shape(bias, Shape{out_f}, "affine bias");
  std::vector<T> wt(in * out_f);
  detail::transpose(out_f, in, weight.data().data(), wt.data());
  std::vector<T> y(B * out_f);
  for (std::size_t b = 0; b < B; ++b) std::copy(bias.data().begin(), bias.data().end(), y.begin() + b * out_f);
  detail::gemm_acc(B, out_f, in, x.data().data(), in, 1, wt.data(), out_f, y.data(), out_f);
  return detail::make_result<T>(
      "affine", Shape{B, out_f}, std::move(y), {&x, &weight, &bias},
      [xn = x.node(), wn = weight.node(), bn = bias.node(), B, in, out_f](detail::Node<T>& out) {
        const T* dy = out.grad.data();
        if (T* gx = detail::grad_of(xn)) detail::gemm_acc(B, in, out_f, dy, out_f, 1, wn->data.data(), in, gx, in);
        if (T* gw = detail::grad_of(wn)) detail::gemm_acc(out_f, in, B, dy, 1, out_f, xn->data.data(), in, gw, in);
        if (T* gb = detail::grad_of(bn))
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < out_f; ++o) gb[o] += dy[b * out_f + o];
      });
}

/// Softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t n = s[axis];
  auto x = a.data();
  std::vector<T> y(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
      T z = T(0);
      for (std::size_t k = 0; k < n; ++k) z += (y[base + k * inner] = std::exp(x[base + k * inner] - mx));
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] /= z;
    }
  return detail::make_result<T>("softmax", s, std::move(y), {&a},
                                [an = a.node(), outer, inner, n](detail::Node<T>& out) {
                                  T* g = detail::grad_of(an);
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t in = 0; in < inner; ++in) {
                                      const std::size_t base = o * n * inner + in;
                                      T dot = T(0);
                                      for (std::size_t k = 0; k < n; ++k)
                                        dot += out.grad[base + k * inner] * out.data[base + k * inner];
                                      for (std::size_t k = 0; k < n; ++k) {
                                        const std::size_t i = base + k * inner;
                                        g[i] += out.data[i] * (out.grad[i] - dot);
                                      }
                                    }
                                });
}

/// Inverted dropout. `train == false` (or p == 0) is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, bool train, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: p must lie in [0,1), got " + std::to_string(p));
  if (!train || p == 0.0) return a;
  std::mt19937_64 rng(seed);
  const T scale = T(1) / static_cast<T>(1.0 - p);
  std::vector<T> mask(a.size());
  for (T& m : mask) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m = u < p ? T(0) : scale;
  }
  std::vector<T> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * mask[i];
  return detail::make_result<T>("dropout", a.shape(), std::move(y), {&a},
                                [an = a.node(), mask = std::move(mask)](detail::Node<T>& out) {
                                  T* g = detail::grad_of(an);
                                  for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * mask[i];
                                });
}

/// x[B,C,...] * w[B,C], broadcast over the trailing axes.
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.ndim() < 2) throw DimensionError("scale_channels: input needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), inner = x.size() / (B * C);
  require_shape(w, Shape{B, C}, "scale_channels weights");
  std::vector<T> y(x.size());
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t i = 0; i < inner; ++i) y[bc * inner + i] = x.data()[bc * inner + i] * w.data()[bc];
  return detail::make_result<T>("scale_channels", x.shape(), std::move(y), {&x, &w},
                                [xn = x.node(), wn = w.node(), B, C, inner](detail::Node<T>& out) {
                                  T* gx = detail::grad_of(xn);
                                  T* gw = detail::grad_of(wn);
                                  for (std::size_t bc = 0; bc < B * C; ++bc) {
                                    T acc = T(0);
                                    for (std::size_t i = 0; i < inner; ++i) {
                                      const T g = out.grad[bc * inner + i];
                                      if (gx) gx[bc * inner + i] += g * wn->data[bc];
                                      acc += g * xn->data[bc * inner + i];
                                    }
                                    if (gw) gw[bc] += acc;
                                  }
                                });
}

/// x[B,...,F] * g[B,F], broadcast over the middle axes.
template <typename T>
Tensor<T> scale_last_axis(const Tensor<T>& x, const Tensor<T>& g) {
  if (x.ndim() < 2) throw DimensionError("scale_last_axis: input needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), F = x.shape().back(), mid = x.size() / (B * F);
  require_shape(g, Shape{B, F}, "scale_last_axis weights");
  std::vector<T> y(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t m = 0; m < mid; ++m) {
      const std::size_t base = (b * mid + m) * F;
      for (std::size_t f = 0; f < F; ++f) y[base + f] = x.data()[base + f] * g.data()[b * F + f];
    }
  return detail::make_result<T>("scale_last_axis", x.shape(), std::move(y), {&x, &g},
                                [xn = x.node(), gn = g.node(), B, F, mid](detail::Node<T>& out) {
                                  T* gx = detail::grad_of(xn);
                                  T* gg = detail::grad_of(gn);
                                  for (std::size_t b = 0; b < B; ++b)
                                    for (std::size_t m = 0; m < mid; ++m) {
                                      const std::size_t base = (b * mid + m) * F;
                                      for (std::size_t f = 0; f < F; ++f) {
                                        const T d = out.grad[base + f];
                                        if (gx) gx[base + f] += d * gn->data[b * F + f];
                                        if (gg) gg[b * F + f] += d * xn->data[base + f];
                                      }
                                    }
                                });
}

}  // namespace mtbca
