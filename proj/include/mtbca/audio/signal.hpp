#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mtbca/audio/wav.hpp"

namespace mtbca::audio {

/// Linear-interpolation resampler. Output length is round(n * target / rate)
/// so duration is preserved within one output sample period.
inline AudioClip resample(const AudioClip& clip, std::uint32_t target_sr) {
  if (target_sr == 0) throw ConfigError("resample: target sample rate must be positive");
  if (clip.sample_rate == 0) throw ConfigError("resample: clip has no sample rate");
  if (clip.sample_rate == target_sr || clip.samples.empty()) {
    AudioClip out = clip;
    out.sample_rate = target_sr;
    return out;
  }
  const std::size_t n = clip.samples.size();
  const auto m = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * static_cast<double>(target_sr) / static_cast<double>(clip.sample_rate)));
  AudioClip out;
  out.sample_rate = target_sr;
  out.label = clip.label;
  out.source_path = clip.source_path;
  out.samples.resize(m);
  const double step = static_cast<double>(clip.sample_rate) / static_cast<double>(target_sr);
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = static_cast<double>(i) * step;
    auto lo = static_cast<std::size_t>(pos);
    if (lo >= n - 1) {
      out.samples[i] = clip.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(lo);
    out.samples[i] = static_cast<float>((1.0 - frac) * clip.samples[lo] + frac * clip.samples[lo + 1]);
  }
  return out;
}

/// Sliding windows of round(window_s * rate) samples every round(hop_s * rate)
/// samples; count = floor((len - window) / hop) + 1. Clips shorter than one
/// window yield a single zero-padded window.
inline std::vector<AudioClip> segment(const AudioClip& clip, double window_s = 1.5, double hop_s = 0.05) {
  if (!(window_s > 0.0) || !(hop_s > 0.0)) throw ConfigError("segment: window and hop must be positive");
  const auto window = static_cast<std::size_t>(std::llround(window_s * clip.sample_rate));
  const auto hop = static_cast<std::size_t>(std::llround(hop_s * clip.sample_rate));
  if (window == 0 || hop == 0) throw ConfigError("segment: window or hop rounds to zero samples");
  std::vector<AudioClip> out;
  auto make = [&](std::size_t start) {
    AudioClip s;
    s.sample_rate = clip.sample_rate;
    s.label = clip.label;
    s.source_path = clip.source_path;
    s.samples.assign(window, 0.0f);
    const std::size_t end = std::min(start + window, clip.samples.size());
    std::copy(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
              clip.samples.begin() + static_cast<std::ptrdiff_t>(end), s.samples.begin());
    return s;
  };
  if (clip.samples.size() < window) {
    out.push_back(make(0));
    return out;
  }
  const std::size_t count = (clip.samples.size() - window) / hop + 1;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(make(k * hop));
  return out;
}

}  // namespace mtbca::audio
