#pragma once

// Synthetic tone corpora: every class is a sinusoidal carrier at its own
// frequency, sounded as one burst over white noise. Separable by
// construction. The burst never fills the clip, so the quietest frames are
// noise only, which is what the noise-floor estimate assumes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "mtbca/audio/mel.hpp"
#include "mtbca/audio/wav.hpp"
#include "mtbca/init.hpp"

namespace mtbca::synth {

struct ToneSpec {
  std::size_t classes = 27;
  std::size_t clips_per_class = 8;
  double duration_s = 1.5;
  std::uint32_t sample_rate = 16000;
  double f_low = 300.0;
  double f_high = 6000.0;
  double amplitude = 0.5;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

/// Carrier of class k, spaced uniformly on the perceptual scale so adjacent
/// classes land in different filterbank channels.
inline double carrier_hz(const ToneSpec& s, std::size_t k) {
  const double lo = audio::mel_scale(s.f_low), hi = audio::mel_scale(s.f_high);
  const double frac = s.classes > 1 ? static_cast<double>(k) / static_cast<double>(s.classes - 1) : 0.0;
  return audio::inverse_mel_scale(lo + (hi - lo) * frac);
}

inline std::string class_name(std::size_t k) {
  std::string n = std::to_string(k);
  return "class_" + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

/// Clip `i` of class `k`: one burst covering 50-75% of the clip at a random
/// onset, with random phase, amplitude jitter, +-1% detune and 10 ms fades.
inline audio::AudioClip tone_clip(const ToneSpec& s, std::size_t k, std::size_t i) {
  Rng rng(s.seed * 1000003ULL + k * 1009ULL + i);
  const double phase = 2.0 * std::numbers::pi * uniform01(rng);
  const double amp = s.amplitude * (0.7 + 0.3 * uniform01(rng));
  const double hz = carrier_hz(s, k) * (0.99 + 0.02 * uniform01(rng));
  const auto n = static_cast<std::size_t>(std::llround(s.duration_s * s.sample_rate));
  const auto len = static_cast<std::size_t>(static_cast<double>(n) * (0.5 + 0.25 * uniform01(rng)));
  const auto onset = static_cast<std::size_t>(static_cast<double>(n - len) * uniform01(rng));
  const double fade = std::max(1.0, 0.01 * s.sample_rate);
  audio::AudioClip c;
  c.sample_rate = s.sample_rate;
  c.label = class_name(k);
  c.samples.resize(n);
  const double w = 2.0 * std::numbers::pi * hz / s.sample_rate;
  for (std::size_t j = 0; j < n; ++j) {
    const double noise = s.noise * (2.0 * uniform01(rng) - 1.0) * std::sqrt(3.0);
    double env = 0.0;
    if (j >= onset && j < onset + len) {
      const double edge = std::min(static_cast<double>(j - onset), static_cast<double>(onset + len - 1 - j));
      env = edge >= fade ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * edge / fade);
    }
    c.samples[j] = static_cast<float>(amp * env * std::sin(w * static_cast<double>(j) + phase) + noise);
  }
  return c;
}

/// Writes root/<class_name>/clip_<i>.wav for every class and clip.
inline void write_tone_corpus(const std::filesystem::path& root, const ToneSpec& s) {
  for (std::size_t k = 0; k < s.classes; ++k)
    for (std::size_t i = 0; i < s.clips_per_class; ++i)
      audio::write_wav(root / class_name(k) / ("clip_" + std::to_string(i) + ".wav"), tone_clip(s, k, i),
                       audio::WavEncoding::Pcm16);
}

}  // namespace mtbca::synth
