#pragma once

// Spatial ops on [B,C,H,W] tensors: convolution, transposed convolution,
// pooling, 2x average downsampling and bilinear resize.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mtbca/gemm.hpp"
#include "mtbca/ops.hpp"
#include "mtbca/tensor.hpp"

namespace mtbca {

struct ConvGeometry {
  std::size_t channels, in_h, in_w, k_h, k_w, stride, pad, out_h, out_w;
};

namespace detail {

// src [C,H,W] -> dst [C*kh*kw, Ho*Wo]
template <typename T>
void im2col(const ConvGeometry& g, const T* src, T* dst) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.k_h; ++ky)
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        T* row = dst + ((c * g.k_h + ky) * g.k_w + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* r = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(r, r + g.out_w, T(0));
            continue;
          }
          const T* s = src + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            r[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T(0) : s[ix];
          }
        }
      }
}

// Adjoint of im2col: accumulates src [C*kh*kw, Ho*Wo] into dst [C,H,W].
template <typename T>
void col2im(const ConvGeometry& g, const T* src, T* dst) {
  const std::size_t P = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.k_h; ++ky)
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        const T* row = src + ((c * g.k_h + ky) * g.k_w + kx) * P;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          T* d = dst + (c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          const T* r = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) d[ix] += r[ox];
          }
        }
      }
}

}  // namespace detail

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline std::size_t conv_transpose_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in - 1) * stride + k - 2 * pad;
}

/// input [B,Cin,H,W], weight [Cout,Cin,kH,kW], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 1) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const std::size_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != Cin) {
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(Cin) +
                         " channels, weight " + shape_str(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1)));
  }
  if (kh > H + 2 * padding || kw > W + 2 * padding || kh == 0 || kw == 0) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  require_shape(bias, Shape{Cout}, "conv2d bias");
  const ConvGeometry g{Cin, H, W, kh, kw, stride, padding, conv_out_size(H, kh, stride, padding),
                       conv_out_size(W, kw, stride, padding)};
  const std::size_t K = Cin * kh * kw, P = g.out_h * g.out_w;

  std::vector<T> cols(B * K * P);
  std::vector<T> y(B * Cout * P);
  const T* x = input.data().data();
  const T* w = weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    T* cb = cols.data() + b * K * P;
    detail::im2col(g, x + b * Cin * H * W, cb);
    T* yb = y.data() + b * Cout * P;
    for (std::size_t o = 0; o < Cout; ++o) std::fill(yb + o * P, yb + (o + 1) * P, bias.data()[o]);
    detail::gemm_acc(Cout, P, K, w, K, 1, cb, P, yb, P);
  }
  if (!detail::any_requires_grad<T>({&input, &weight, &bias})) cols.clear();
  return detail::make_result<T>(
      "conv2d", Shape{B, Cout, g.out_h, g.out_w}, std::move(y), {&input, &weight, &bias},
      [xn = input.node(), wn = weight.node(), bn = bias.node(), cols = std::move(cols), g, B, Cout, K,
       P](detail::Node<T>& out) {
        T* gx = detail::grad_of(xn);
        T* gw = detail::grad_of(wn);
        T* gb = detail::grad_of(bn);
        std::vector<T> scratch(K * P);
        for (std::size_t b = 0; b < B; ++b) {
          const T* dy = out.grad.data() + b * Cout * P;
          if (gb)
            for (std::size_t o = 0; o < Cout; ++o) {
              T s = T(0);
              for (std::size_t p = 0; p < P; ++p) s += dy[o * P + p];
              gb[o] += s;
            }
          if (gw) {
            detail::transpose(K, P, cols.data() + b * K * P, scratch.data());
            detail::gemm_acc(Cout, K, P, dy, P, 1, scratch.data(), K, gw, K);
          }
          if (gx) {
            std::fill(scratch.begin(), scratch.end(), T(0));
            detail::gemm_acc(K, P, Cout, wn->data.data(), 1, K, dy, P, scratch.data(), P);
            detail::col2im(g, scratch.data(), gx + b * g.channels * g.in_h * g.in_w);
          }
        }
      });
}

/// input [B,Cin,H,W], weight [Cin,Cout,kH,kW], bias [Cout]. Output spatial
/// size is (H-1)*stride - 2*padding + kH. Forward equals the input-gradient
/// of conv2d with the same weight, stride and padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv_transpose2d input");
  require_rank(weight, 4, "conv_transpose2d weight");
  if (stride < 1) throw ConfigError("conv_transpose2d: stride must be >= 1");
  const std::size_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t Cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != Cin) {
    throw DimensionError("conv_transpose2d: input " + shape_str(input.shape()) + " vs weight " +
                         shape_str(weight.shape()));
  }
  require_shape(bias, Shape{Cout}, "conv_transpose2d bias");
  if ((H - 1) * stride + kh <= 2 * padding || (W - 1) * stride + kw <= 2 * padding) {
    throw DimensionError("conv_transpose2d: padding leaves an empty output");
  }
  const std::size_t Ho = conv_transpose_out_size(H, kh, stride, padding);
  const std::size_t Wo = conv_transpose_out_size(W, kw, stride, padding);
  // Geometry of the forward conv that maps the output back onto the input.
  const ConvGeometry g{Cout, Ho, Wo, kh, kw, stride, padding, H, W};
  const std::size_t KK = Cout * kh * kw, P = H * W, Q = Ho * Wo;

  std::vector<T> y(B * Cout * Q);
  std::vector<T> cols(KK * P);
  const T* x = input.data().data();
  const T* w = weight.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(cols.begin(), cols.end(), T(0));
    detail::gemm_acc(KK, P, Cin, w, 1, KK, x + b * Cin * P, P, cols.data(), P);
    T* yb = y.data() + b * Cout * Q;
    detail::col2im(g, cols.data(), yb);
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t q = 0; q < Q; ++q) yb[o * Q + q] += bias.data()[o];
  }
  return detail::make_result<T>(
      "conv_transpose2d", Shape{B, Cout, Ho, Wo}, std::move(y), {&input, &weight, &bias},
      [xn = input.node(), wn = weight.node(), bn = bias.node(), g, B, Cin, Cout, KK, P, Q](detail::Node<T>& out) {
        T* gx = detail::grad_of(xn);
        T* gw = detail::grad_of(wn);
        T* gb = detail::grad_of(bn);
        std::vector<T> dcols(KK * P), dcols_t(P * KK);
        for (std::size_t b = 0; b < B; ++b) {
          const T* dy = out.grad.data() + b * Cout * Q;
          if (gb)
            for (std::size_t o = 0; o < Cout; ++o) {
              T s = T(0);
              for (std::size_t q = 0; q < Q; ++q) s += dy[o * Q + q];
              gb[o] += s;
            }
          detail::im2col(g, dy, dcols.data());
          if (gx) detail::gemm_acc(Cin, P, KK, wn->data.data(), KK, 1, dcols.data(), P, gx + b * Cin * P, P);
          if (gw) {
            detail::transpose(KK, P, dcols.data(), dcols_t.data());
            detail::gemm_acc(Cin, KK, P, xn->data.data() + b * Cin * P, P, 1, dcols_t.data(), KK, gw, KK);
          }
        }
      });
}

enum class PoolKind { AdaptiveAvg, GlobalAvg, GlobalMax };

/// Pools [B,C,H,W] to [B,C,oh,ow]. Adaptive bins span
/// [floor(i*H/oh), ceil((i+1)*H/oh)). Global kinds ignore `out_h/out_w` and
/// produce 1x1; max ties route the gradient to the first index.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, std::size_t out_h = 1, std::size_t out_w = 1) {
  require_rank(input, 4, "pool2d input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H == 0 || W == 0) throw DimensionError("pool2d: empty spatial dims " + shape_str(input.shape()));
  if (kind != PoolKind::AdaptiveAvg) out_h = out_w = 1;
  if (out_h == 0 || out_w == 0) throw DimensionError("pool2d: output size must be positive");
  const std::size_t HW = H * W, OQ = out_h * out_w;
  auto x = input.data();
  std::vector<T> y(B * C * OQ);

  if (kind == PoolKind::GlobalMax) {
    std::vector<std::size_t> arg(B * C);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < HW; ++i)
        if (x[bc * HW + i] > x[bc * HW + best]) best = i;
      arg[bc] = best;
      y[bc] = x[bc * HW + best];
    }
    return detail::make_result<T>("global_max_pool", Shape{B, C, 1, 1}, std::move(y), {&input},
                                  [xn = input.node(), arg = std::move(arg), HW](detail::Node<T>& out) {
                                    T* g = detail::grad_of(xn);
                                    for (std::size_t bc = 0; bc < arg.size(); ++bc) g[bc * HW + arg[bc]] += out.grad[bc];
                                  });
  }

  auto bins = [](std::size_t n, std::size_t parts) {
    std::vector<std::pair<std::size_t, std::size_t>> r(parts);
    for (std::size_t i = 0; i < parts; ++i) r[i] = {(i * n) / parts, ((i + 1) * n + parts - 1) / parts};
    return r;
  };
  const auto rows = bins(H, out_h), cols = bins(W, out_w);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        T s = T(0);
        for (std::size_t iy = rows[oy].first; iy < rows[oy].second; ++iy)
          for (std::size_t ix = cols[ox].first; ix < cols[ox].second; ++ix) s += x[bc * HW + iy * W + ix];
        const std::size_t n = (rows[oy].second - rows[oy].first) * (cols[ox].second - cols[ox].first);
        y[bc * OQ + oy * out_w + ox] = s / static_cast<T>(n);
      }
  return detail::make_result<T>(
      "adaptive_avg_pool", Shape{B, C, out_h, out_w}, std::move(y), {&input},
      [xn = input.node(), rows, cols, B, C, W, HW, OQ, out_w](detail::Node<T>& out) {
        T* g = detail::grad_of(xn);
        for (std::size_t bc = 0; bc < B * C; ++bc)
          for (std::size_t oy = 0; oy < rows.size(); ++oy)
            for (std::size_t ox = 0; ox < cols.size(); ++ox) {
              const std::size_t n = (rows[oy].second - rows[oy].first) * (cols[ox].second - cols[ox].first);
              const T d = out.grad[bc * OQ + oy * out_w + ox] / static_cast<T>(n);
              for (std::size_t iy = rows[oy].first; iy < rows[oy].second; ++iy)
                for (std::size_t ix = cols[ox].first; ix < cols[ox].second; ++ix) g[bc * HW + iy * W + ix] += d;
            }
      });
}

/// [B,C,H,W] -> [B,C] channel statistics.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  return reshape(pool2d(x, PoolKind::GlobalAvg), Shape{x.dim(0), x.dim(1)});
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  return reshape(pool2d(x, PoolKind::GlobalMax), Shape{x.dim(0), x.dim(1)});
}

/// Non-overlapping 2x2 average; odd trailing rows/columns are dropped.
template <typename T>
Tensor<T> avg_downsample2x(const Tensor<T>& input) {
  require_rank(input, 4, "avg_downsample2x input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H < 2 || W < 2) throw DimensionError("avg_downsample2x: input too small " + shape_str(input.shape()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  auto x = input.data();
  std::vector<T> y(B * C * Ho * Wo);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const T* r0 = x.data() + bc * H * W + 2 * oy * W;
      const T* r1 = r0 + W;
      T* o = y.data() + (bc * Ho + oy) * Wo;
      for (std::size_t ox = 0; ox < Wo; ++ox)
        o[ox] = T(0.25) * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
    }
  return detail::make_result<T>("avg_downsample2x", Shape{B, C, Ho, Wo}, std::move(y), {&input},
                                [xn = input.node(), B, C, H, W, Ho, Wo](detail::Node<T>& out) {
                                  T* g = detail::grad_of(xn);
                                  for (std::size_t bc = 0; bc < B * C; ++bc)
                                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                                      T* r0 = g + bc * H * W + 2 * oy * W;
                                      T* r1 = r0 + W;
                                      const T* d = out.grad.data() + (bc * Ho + oy) * Wo;
                                      for (std::size_t ox = 0; ox < Wo; ++ox) {
                                        const T q = T(0.25) * d[ox];
                                        r0[2 * ox] += q;
                                        r0[2 * ox + 1] += q;
                                        r1[2 * ox] += q;
                                        r1[2 * ox + 1] += q;
                                      }
                                    }
                                });
}

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  double w_hi;
};

// Half-pixel-centred source coordinates (align_corners = false).
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto lo = static_cast<std::size_t>(src);
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = lo + 1 < in ? lo + 1 : lo;
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of [B,C,H,W] to [B,C,out_h,out_w].
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  require_rank(input, 4, "bilinear_resize input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H == 0 || W == 0 || out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: empty spatial dims");
  if (H == out_h && W == out_w) return input;
  const auto ty = detail::lerp_taps(H, out_h), tx = detail::lerp_taps(W, out_w);
  auto x = input.data();
  std::vector<T> y(B * C * out_h * out_w);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* s = x.data() + bc * H * W;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const T wy = static_cast<T>(ty[oy].w_hi);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const T wx = static_cast<T>(tx[ox].w_hi);
        const T top = s[ty[oy].lo * W + tx[ox].lo] * (T(1) - wx) + s[ty[oy].lo * W + tx[ox].hi] * wx;
        const T bot = s[ty[oy].hi * W + tx[ox].lo] * (T(1) - wx) + s[ty[oy].hi * W + tx[ox].hi] * wx;
        y[(bc * out_h + oy) * out_w + ox] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  return detail::make_result<T>("bilinear_resize", Shape{B, C, out_h, out_w}, std::move(y), {&input},
                                [xn = input.node(), ty, tx, B, C, H, W, out_h, out_w](detail::Node<T>& out) {
                                  T* g = detail::grad_of(xn);
                                  for (std::size_t bc = 0; bc < B * C; ++bc) {
                                    T* d = g + bc * H * W;
                                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                                      const T wy = static_cast<T>(ty[oy].w_hi);
                                      for (std::size_t ox = 0; ox < out_w; ++ox) {
                                        const T wx = static_cast<T>(tx[ox].w_hi);
                                        const T gv = out.grad[(bc * out_h + oy) * out_w + ox];
                                        d[ty[oy].lo * W + tx[ox].lo] += gv * (T(1) - wy) * (T(1) - wx);
                                        d[ty[oy].lo * W + tx[ox].hi] += gv * (T(1) - wy) * wx;
                                        d[ty[oy].hi * W + tx[ox].lo] += gv * wy * (T(1) - wx);
                                        d[ty[oy].hi * W + tx[ox].hi] += gv * wy * wx;
                                      }
                                    }
                                  }
                                });
}

}  // namespace mtbca
