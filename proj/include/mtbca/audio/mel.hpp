#pragma once

// Perceptual frequency warp, triangular filterbank, log-Mel map and the
// 2-channel (log-Mel + temporal delta) model input.

#include <cmath>
#include <string>
#include <vector>

#include "mtbca/audio/spectrum.hpp"

namespace mtbca::audio {

/// Gamma(nu) = c1 * log10(1 + nu / c2).
inline double mel_scale(double hz, double c1 = 2595.0, double c2 = 700.0) { return c1 * std::log10(1.0 + hz / c2); }

inline double inverse_mel_scale(double mel, double c1 = 2595.0, double c2 = 700.0) {
  return c2 * (std::pow(10.0, mel / c1) - 1.0);
}

struct MelFilterBank {
  std::size_t n_mels = 0;
  std::size_t bins = 0;
  std::size_t n_fft = 0;
  std::uint32_t sample_rate = 0;
  double c1 = 2595.0;
  double c2 = 700.0;
  /// n_mels + 2 edge/centre frequencies in Hz; filter m peaks at centers[m+1].
  std::vector<double> centers;
  /// n_mels x bins filter weights sampled at the FFT bin frequencies.
  std::vector<double> filters;

  double operator()(std::size_t m, std::size_t b) const { return filters[m * bins + b]; }
  double bin_frequency(std::size_t b) const {
    return static_cast<double>(b) * sample_rate / static_cast<double>(n_fft);
  }

  /// Continuous triangular transfer function of filter m at frequency nu.
  double response(std::size_t m, double nu) const {
    const double lo = centers[m], mid = centers[m + 1], hi = centers[m + 2];
    if (nu < lo || nu > hi) return 0.0;
    if (nu <= mid) return (nu - lo) / (mid - lo);
    return (hi - nu) / (hi - mid);
  }
};

inline MelFilterBank mel_filterbank(std::size_t n_mels, std::size_t n_fft, std::uint32_t sample_rate, double fmin,
                                    double fmax, double c1 = 2595.0, double c2 = 700.0) {
  if (n_mels < 2) throw ConfigError("mel_filterbank: n_mels must be >= 2");
  if (!is_power_of_two(n_fft)) throw ConfigError("mel_filterbank: n_fft must be a power of two");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ConfigError("mel_filterbank: need 0 <= fmin < fmax <= sample_rate/2, got fmin=" + std::to_string(fmin) +
                      " fmax=" + std::to_string(fmax) + " sample_rate=" + std::to_string(sample_rate));
  }
  if (!(c1 > 0.0 && c2 > 0.0)) throw ConfigError("mel_filterbank: c1 and c2 must be positive");
  MelFilterBank fb;
  fb.n_mels = n_mels;
  fb.n_fft = n_fft;
  fb.bins = n_fft / 2 + 1;
  fb.sample_rate = sample_rate;
  fb.c1 = c1;
  fb.c2 = c2;
  const double lo = mel_scale(fmin, c1, c2), hi = mel_scale(fmax, c1, c2);
  fb.centers.resize(n_mels + 2);
  for (std::size_t i = 0; i < n_mels + 2; ++i)
    fb.centers[i] = inverse_mel_scale(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1), c1, c2);
  fb.centers.front() = fmin;
  fb.centers.back() = fmax;
  fb.filters.assign(n_mels * fb.bins, 0.0);
  for (std::size_t m = 0; m < n_mels; ++m)
    for (std::size_t b = 0; b < fb.bins; ++b) fb.filters[m * fb.bins + b] = fb.response(m, fb.bin_frequency(b));
  return fb;
}

/// frames x n_mels natural-log energies.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t n_mels = 0;
  std::vector<double> values;

  double operator()(std::size_t t, std::size_t m) const { return values[t * n_mels + m]; }
};

inline MelSpectrogram log_mel(const PowerSpectrogram& spec, const MelFilterBank& fb, double floor = 1e-10) {
  if (spec.bins != fb.bins) {
    throw DimensionError("log_mel: spectrogram has " + std::to_string(spec.bins) + " bins, filterbank expects " +
                         std::to_string(fb.bins));
  }
  MelSpectrogram mel{spec.frames, fb.n_mels, std::vector<double>(spec.frames * fb.n_mels)};
  for (std::size_t t = 0; t < spec.frames; ++t)
    for (std::size_t m = 0; m < fb.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < fb.bins; ++b) e += fb(m, b) * spec(t, b);
      mel.values[t * fb.n_mels + m] = std::log(e + floor);
    }
  return mel;
}

/// delta[t] = mel[t] - mel[t-1], first row zero.
inline std::vector<double> temporal_delta(const MelSpectrogram& mel) {
  std::vector<double> d(mel.values.size(), 0.0);
  for (std::size_t t = 1; t < mel.frames; ++t)
    for (std::size_t m = 0; m < mel.n_mels; ++m) d[t * mel.n_mels + m] = mel(t, m) - mel(t - 1, m);
  return d;
}

/// 2 x t x f model input: channel 0 log-Mel, channel 1 temporal delta, both
/// standardized jointly by one mean and (population) standard deviation.
struct FeatureTensor {
  std::size_t t = 0;
  std::size_t f = 0;
  std::vector<float> values;
  float mean = 0.0f;
  float stddev = 1.0f;

  float operator()(std::size_t c, std::size_t i, std::size_t j) const { return values[(c * t + i) * f + j]; }
};

inline FeatureTensor make_input_tensor(const MelSpectrogram& mel) {
  if (mel.frames < 2) throw DataError("make_input_tensor: need at least 2 frames, got " + std::to_string(mel.frames));
  if (mel.n_mels == 0) throw DataError("make_input_tensor: no mel bins");
  const std::size_t plane = mel.frames * mel.n_mels;
  std::vector<double> raw(2 * plane);
  std::copy(mel.values.begin(), mel.values.end(), raw.begin());
  const auto delta = temporal_delta(mel);
  std::copy(delta.begin(), delta.end(), raw.begin() + static_cast<std::ptrdiff_t>(plane));
  double mean = 0.0;
  for (double v : raw) mean += v;
  mean /= static_cast<double>(raw.size());
  double var = 0.0;
  for (double v : raw) var += (v - mean) * (v - mean);
  var /= static_cast<double>(raw.size());
  const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
  FeatureTensor ft{mel.frames, mel.n_mels, std::vector<float>(raw.size()), static_cast<float>(mean),
                   static_cast<float>(sd)};
  for (std::size_t i = 0; i < raw.size(); ++i) ft.values[i] = static_cast<float>((raw[i] - mean) / sd);
  return ft;
}

}  // namespace mtbca::audio
