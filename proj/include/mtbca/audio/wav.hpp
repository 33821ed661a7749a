#pragma once

// RIFF/WAVE reader and writer. Reads PCM 8/16/24/32-bit and IEEE float
// 32-bit, mono or stereo; stereo is downmixed by channel mean.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtbca/binary_io.hpp"
#include "mtbca/errors.hpp"

namespace mtbca::audio {

struct AudioClip {
  std::vector<float> samples;
  std::uint32_t sample_rate = 0;
  std::optional<std::string> label;
  std::string source_path;

  double duration_s() const {
    return sample_rate ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavEncoding { Pcm8, Pcm16, Pcm24, Pcm32, Float32 };

namespace detail {

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

inline bool tag_is(const std::uint8_t* p, const char* tag) {
  return std::equal(p, p + 4, reinterpret_cast<const std::uint8_t*>(tag));
}

inline double decode_sample(const std::uint8_t* p, std::uint16_t format, std::uint16_t bits) {
  if (format == kFormatFloat) return static_cast<double>(get_f32(p));
  switch (bits) {
    case 8:
      return (static_cast<double>(p[0]) - 128.0) / 128.0;
    case 16:
      return static_cast<double>(static_cast<std::int16_t>(get_u16(p))) / 32768.0;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return static_cast<double>(v) / 8388608.0;
    }
    default:
      return static_cast<double>(static_cast<std::int32_t>(get_u32(p))) / 2147483648.0;
  }
}

}  // namespace detail

inline AudioClip parse_wav(std::span<const std::uint8_t> bytes, std::string source = "<memory>") {
  using namespace detail;
  if (bytes.size() < 12) throw ParseError("file too short for a RIFF header", bytes.size());
  if (!tag_is(bytes.data(), "RIFF")) throw ParseError("missing RIFF tag", 0);
  if (!tag_is(bytes.data() + 8, "WAVE")) throw ParseError("missing WAVE form type", 8);

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t size = get_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (tag_is(hdr, "fmt ")) {
      if (size < 16 || body + size > bytes.size()) throw ParseError("truncated fmt chunk", pos);
      const std::uint8_t* f = bytes.data() + body;
      format = get_u16(f);
      channels = get_u16(f + 2);
      sample_rate = get_u32(f + 4);
      block_align = get_u16(f + 12);
      bits = get_u16(f + 14);
      if (format == kFormatExtensible) {
        if (size < 40) throw ParseError("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk", pos);
        format = get_u16(f + 24);
      }
      if (format != kFormatPcm && format != kFormatFloat) {
        throw ParseError("unsupported codec (format tag " + std::to_string(format) + ")", body);
      }
      if (format == kFormatPcm && bits != 8 && bits != 16 && bits != 24 && bits != 32) {
        throw ParseError("unsupported PCM bit depth " + std::to_string(bits), body + 14);
      }
      if (format == kFormatFloat && bits != 32) {
        throw ParseError("unsupported float bit depth " + std::to_string(bits), body + 14);
      }
      if (channels < 1 || channels > 2) {
        throw ParseError("unsupported channel count " + std::to_string(channels), body + 2);
      }
      if (sample_rate == 0) throw ParseError("sample rate is zero", body + 4);
      if (block_align != channels * (bits / 8)) throw ParseError("inconsistent block align", body + 12);
      have_fmt = true;
    } else if (tag_is(hdr, "data")) {
      if (!have_fmt) throw ParseError("data chunk before fmt chunk", pos);
      if (body + size > bytes.size()) throw ParseError("data chunk truncated", bytes.size());
      const std::size_t frames = size / block_align;
      const std::size_t width = bits / 8;
      AudioClip clip;
      clip.sample_rate = sample_rate;
      clip.source_path = std::move(source);
      clip.samples.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        const std::uint8_t* fr = bytes.data() + body + i * block_align;
        double v = 0.0;
        for (std::size_t c = 0; c < channels; ++c) v += decode_sample(fr + c * width, format, bits);
        v /= channels;
        if (!std::isfinite(v)) throw ParseError("non-finite float sample", body + i * block_align);
        clip.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  throw ParseError(have_fmt ? "no data chunk" : "no fmt chunk", pos);
}

inline AudioClip read_wav(const std::filesystem::path& path) {
  return parse_wav(read_file(path), path.string());
}

/// Encodes one or two equal-length channels. Integer encodings scale by the
/// type's max magnitude (e.g. 32768) and clamp to the representable range.
inline Bytes encode_wav(std::span<const std::vector<float>> channels, std::uint32_t sample_rate,
                        WavEncoding enc = WavEncoding::Pcm16) {
  if (channels.empty() || channels.size() > 2) throw ConfigError("encode_wav: need 1 or 2 channels");
  const std::size_t frames = channels[0].size();
  for (const auto& ch : channels)
    if (ch.size() != frames) throw DimensionError("encode_wav: channel lengths differ");
  const std::uint16_t bits = enc == WavEncoding::Pcm8 ? 8 : enc == WavEncoding::Pcm16 ? 16 : enc == WavEncoding::Pcm24 ? 24 : 32;
  const auto nch = static_cast<std::uint16_t>(channels.size());
  const std::uint16_t align = static_cast<std::uint16_t>(nch * bits / 8);
  const auto data_size = static_cast<std::uint32_t>(frames * align);

  Bytes out;
  out.reserve(44 + data_size + 1);
  put_bytes(out, "RIFF");
  put_u32(out, 36 + data_size + (data_size & 1u));
  put_bytes(out, "WAVE");
  put_bytes(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, enc == WavEncoding::Float32 ? detail::kFormatFloat : detail::kFormatPcm);
  put_u16(out, nch);
  put_u32(out, sample_rate);
  put_u32(out, sample_rate * align);
  put_u16(out, align);
  put_u16(out, bits);
  put_bytes(out, "data");
  put_u32(out, data_size);
  auto quantize = [](double x, double scale, double lo, double hi) {
    return static_cast<std::int64_t>(std::clamp(std::round(x * scale), lo, hi));
  };
  for (std::size_t i = 0; i < frames; ++i)
    for (const auto& ch : channels) {
      const double x = ch[i];
      switch (enc) {
        case WavEncoding::Pcm8:
          out.push_back(static_cast<std::uint8_t>(quantize(x, 128.0, -128.0, 127.0) + 128));
          break;
        case WavEncoding::Pcm16:
          put_u16(out, static_cast<std::uint16_t>(quantize(x, 32768.0, -32768.0, 32767.0)));
          break;
        case WavEncoding::Pcm24: {
          const auto v = static_cast<std::uint32_t>(quantize(x, 8388608.0, -8388608.0, 8388607.0));
          out.push_back(static_cast<std::uint8_t>(v));
          out.push_back(static_cast<std::uint8_t>(v >> 8));
          out.push_back(static_cast<std::uint8_t>(v >> 16));
          break;
        }
        case WavEncoding::Pcm32:
          put_u32(out, static_cast<std::uint32_t>(quantize(x, 2147483648.0, -2147483648.0, 2147483647.0)));
          break;
        case WavEncoding::Float32:
          put_f32(out, static_cast<float>(x));
          break;
      }
    }
  if (data_size & 1u) out.push_back(0);
  return out;
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding enc = WavEncoding::Pcm16) {
  const std::vector<float> ch[1] = {clip.samples};
  write_file(path, encode_wav(ch, clip.sample_rate, enc));
}

}  // namespace mtbca::audio
