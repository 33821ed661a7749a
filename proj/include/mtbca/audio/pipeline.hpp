#pragma once

// Clip -> feature tensors: resample, clip-level noise profile, time-domain
// segmentation, per-segment spectral subtraction and log-Mel features.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mtbca/audio/mel.hpp"
#include "mtbca/audio/signal.hpp"
#include "mtbca/audio/spectrum.hpp"
#include "mtbca/binary_io.hpp"
#include "mtbca/parse.hpp"

namespace mtbca::audio {

struct DspConfig {
  std::uint32_t target_sr = 16000;
  double window_s = 1.5;
  double hop_s = 0.05;
  std::size_t n_fft = 1024;
  std::size_t hop = 256;
  std::size_t n_mels = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double c1 = 2595.0;
  double c2 = 700.0;
  double alpha = 1.0;
  double noise_fraction = 0.1;
  double log_floor = 1e-10;

  /// Stable `key=value;...` text used for fingerprints and headers.
  std::string canonical() const {
    std::ostringstream os;
    os << "target_sr=" << target_sr << ";window_s=" << format_double(window_s) << ";hop_s=" << format_double(hop_s)
       << ";n_fft=" << n_fft << ";hop=" << hop << ";n_mels=" << n_mels << ";fmin=" << format_double(fmin)
       << ";fmax=" << format_double(fmax) << ";c1=" << format_double(c1) << ";c2=" << format_double(c2)
       << ";alpha=" << format_double(alpha) << ";noise_fraction=" << format_double(noise_fraction)
       << ";log_floor=" << format_double(log_floor) << ";window=hann;center=1";
    return os.str();
  }

  std::string fingerprint() const { return hex64(fnv1a64(canonical())); }

  static DspConfig from_canonical(const std::string& text);
  void set(const std::string& key, const std::string& value);

  void validate() const {
    if (target_sr == 0) throw ConfigError("dsp: target_sr must be positive");
    if (!(window_s > 0.0 && hop_s > 0.0)) throw ConfigError("dsp: window_s and hop_s must be positive");
    if (!is_power_of_two(n_fft)) throw ConfigError("dsp: n_fft must be a power of two");
    if (hop == 0 || hop > n_fft) throw ConfigError("dsp: hop must lie in [1, n_fft]");
    if (n_mels < 2) throw ConfigError("dsp: n_mels must be >= 2");
    if (!(fmin >= 0.0 && fmin < fmax && fmax <= target_sr / 2.0)) {
      throw ConfigError("dsp: need 0 <= fmin < fmax <= target_sr/2");
    }
    if (!(alpha >= 0.0)) throw ConfigError("dsp: alpha must be >= 0");
    if (!(noise_fraction > 0.0 && noise_fraction <= 1.0)) throw ConfigError("dsp: noise_fraction must lie in (0,1]");
    if (!(log_floor > 0.0)) throw ConfigError("dsp: log_floor must be positive");
  }

  StftConfig stft() const { return {n_fft, hop, Window::Hann, true}; }

  std::size_t segment_samples() const { return static_cast<std::size_t>(std::llround(window_s * target_sr)); }

  /// Time steps t of every feature tensor this config produces.
  std::size_t frames_per_segment() const { return 1 + segment_samples() / hop; }
};

inline void DspConfig::set(const std::string& k, const std::string& v) {
  if (k == "target_sr") target_sr = static_cast<std::uint32_t>(parse_size(k, v));
  else if (k == "window_s") window_s = parse_double(k, v);
  else if (k == "hop_s") hop_s = parse_double(k, v);
  else if (k == "n_fft") n_fft = parse_size(k, v);
  else if (k == "hop") hop = parse_size(k, v);
  else if (k == "n_mels") n_mels = parse_size(k, v);
  else if (k == "fmin") fmin = parse_double(k, v);
  else if (k == "fmax") fmax = parse_double(k, v);
  else if (k == "c1") c1 = parse_double(k, v);
  else if (k == "c2") c2 = parse_double(k, v);
  else if (k == "alpha") alpha = parse_double(k, v);
  else if (k == "noise_fraction") noise_fraction = parse_double(k, v);
  else if (k == "log_floor") log_floor = parse_double(k, v);
  else throw ConfigError("dsp: unknown key '" + k + "'");
}

inline DspConfig DspConfig::from_canonical(const std::string& text) {
  DspConfig c;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("dsp: malformed item '" + item + "'");
    const std::string k = item.substr(0, eq), v = item.substr(eq + 1);
    // Fixed parts of the pipeline are recorded for readers but not settable.
    if (k == "window" || k == "center") continue;
    c.set(k, v);
  }
  return c;
}

/// Full preprocessing of one clip. The noise profile is estimated once per
/// clip and subtracted from every segment's spectrogram.
inline std::vector<FeatureTensor> clip_to_features(const AudioClip& clip, const DspConfig& cfg,
                                                   const MelFilterBank& fb) {
  const AudioClip resampled = resample(clip, cfg.target_sr);
  const NoiseProfile noise = estimate_noise(stft_power(resampled, cfg.stft()), cfg.noise_fraction);
  std::vector<FeatureTensor> out;
  for (const AudioClip& seg : segment(resampled, cfg.window_s, cfg.hop_s)) {
    const auto clean = spectral_subtract(stft_power(seg, cfg.stft()), noise, cfg.alpha);
    out.push_back(make_input_tensor(log_mel(clean, fb, cfg.log_floor)));
  }
  return out;
}

inline MelFilterBank make_filterbank(const DspConfig& cfg) {
  return mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.target_sr, cfg.fmin, cfg.fmax, cfg.c1, cfg.c2);
}

inline std::vector<FeatureTensor> clip_to_features(const AudioClip& clip, const DspConfig& cfg) {
  cfg.validate();
  return clip_to_features(clip, cfg, make_filterbank(cfg));
}

}  // namespace mtbca::audio
