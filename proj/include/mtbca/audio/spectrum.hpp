#pragma once

// Short-time power spectrum, noise-floor estimation and
// spectral subtraction.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <fftw3.h>

#include "mtbca/audio/wav.hpp"

namespace mtbca::audio {

inline bool is_power_of_two(std::size_t n) { return n && !(n & (n - 1)); }

/// Real-input forward transform of a fixed length through FFTW, planned once
/// with FFTW_ESTIMATE so results do not depend on timing measurements.
class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    if (in_ && out_) plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    if (!plan_) {
      fftw_free(in_);
      fftw_free(out_);
      throw NumericError("fft: cannot plan a transform of length " + std::to_string(n));
    }
  }
  ~RealFft() {
    if (plan_) fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  /// |X_b|^2 for b = 0..n/2 after transforming input().
  void power(double* dst) {
    fftw_execute(plan_);
    for (std::size_t b = 0; b <= n_ / 2; ++b) dst[b] = out_[b][0] * out_[b][0] + out_[b][1] * out_[b][1];
  }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_ = nullptr;
};

enum class Window { Hann, Rectangular };

inline const char* window_name(Window w) { return w == Window::Hann ? "hann" : "rectangular"; }

/// Periodic window of length n.
inline std::vector<double> make_window(Window kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == Window::Hann)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

struct StftConfig {
  std::size_t n_fft = 1024;
  std::size_t hop = 256;
  Window window = Window::Hann;
  /// Zero-pad n_fft/2 on both sides so frame k is centred on sample k*hop.
  bool center = true;
};

/// frames x bins power values |DFT(windowed frame)|^2, bins = n_fft/2 + 1.
struct PowerSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;
  std::size_t n_fft = 0;
  std::size_t hop = 0;
  std::uint32_t sample_rate = 0;
  Window window = Window::Hann;
  /// Set when the input was shorter than one FFT frame and had to be padded.
  bool padded_short_input = false;

  double operator()(std::size_t t, std::size_t b) const { return values[t * bins + b]; }
  double& operator()(std::size_t t, std::size_t b) { return values[t * bins + b]; }
};

inline PowerSpectrogram stft_power(std::span<const float> samples, std::uint32_t sample_rate, const StftConfig& cfg) {
  if (!is_power_of_two(cfg.n_fft)) throw ConfigError("stft: n_fft must be a power of two");
  if (cfg.hop == 0 || cfg.hop > cfg.n_fft) throw ConfigError("stft: hop must lie in [1, n_fft]");
  const std::size_t pad = cfg.center ? cfg.n_fft / 2 : 0;
  std::vector<double> x(samples.size() + 2 * pad, 0.0);
  std::copy(samples.begin(), samples.end(), x.begin() + static_cast<std::ptrdiff_t>(pad));
  PowerSpectrogram s;
  s.padded_short_input = samples.size() < cfg.n_fft;
  if (x.size() < cfg.n_fft) x.resize(cfg.n_fft, 0.0);
  s.n_fft = cfg.n_fft;
  s.hop = cfg.hop;
  s.sample_rate = sample_rate;
  s.window = cfg.window;
  s.bins = cfg.n_fft / 2 + 1;
  s.frames = 1 + (x.size() - cfg.n_fft) / cfg.hop;
  s.values.resize(s.frames * s.bins);
  const auto win = make_window(cfg.window, cfg.n_fft);
  RealFft fft(cfg.n_fft);
  for (std::size_t t = 0; t < s.frames; ++t) {
    const double* frame = x.data() + t * cfg.hop;
    double* in = fft.input();
    for (std::size_t i = 0; i < cfg.n_fft; ++i) in[i] = frame[i] * win[i];
    fft.power(s.values.data() + t * s.bins);
  }
  return s;
}

inline PowerSpectrogram stft_power(const AudioClip& clip, const StftConfig& cfg) {
  return stft_power(clip.samples, clip.sample_rate, cfg);
}

struct NoiseProfile {
  std::vector<double> values;
  std::size_t frames_used = 0;
};

/// Per-bin mean over the ceil(fraction * frames) frames with the lowest total
/// energy (ties keep frame order).
inline NoiseProfile estimate_noise(const PowerSpectrogram& spec, double fraction = 0.1) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("estimate_noise: fraction must lie in (0, 1]");
  if (spec.frames == 0) throw DimensionError("estimate_noise: empty spectrogram");
  std::vector<double> energy(spec.frames, 0.0);
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t b = 0; b < spec.bins; ++b) energy[t] += spec(t, b);
  std::vector<std::size_t> order(spec.frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return energy[a] < energy[b]; });
  const auto k = std::min(spec.frames,
                          static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(spec.frames) - 1e-9)));
  NoiseProfile p{std::vector<double>(spec.bins, 0.0), std::max<std::size_t>(k, 1)};
  for (std::size_t i = 0; i < p.frames_used; ++i)
    for (std::size_t b = 0; b < spec.bins; ++b) p.values[b] += spec(order[i], b);
  for (double& v : p.values) v /= static_cast<double>(p.frames_used);
  return p;
}

/// max(P_x - alpha * P_n, 0) per frame and bin.
inline PowerSpectrogram spectral_subtract(const PowerSpectrogram& spec, const NoiseProfile& noise, double alpha = 1.0) {
  if (!(alpha >= 0.0)) throw ConfigError("spectral_subtract: alpha must be >= 0");
  if (noise.values.size() != spec.bins) {
    throw DimensionError("spectral_subtract: noise profile has " + std::to_string(noise.values.size()) +
                         " bins, spectrogram has " + std::to_string(spec.bins));
  }
  PowerSpectrogram out = spec;
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t b = 0; b < spec.bins; ++b) out(t, b) = std::max(spec(t, b) - alpha * noise.values[b], 0.0);
  return out;
}

}  // namespace mtbca::audio
