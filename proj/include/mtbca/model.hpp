#pragma once

// Shared encoder of four attention-augmented conv blocks, a classification
// head and a transposed-conv reconstruction decoder.

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mtbca/attention.hpp"
#include "mtbca/batchnorm.hpp"
#include "mtbca/binary_io.hpp"
#include "mtbca/conv.hpp"
#include "mtbca/init.hpp"
#include "mtbca/losses.hpp"
#include "mtbca/ops.hpp"
#include "mtbca/parse.hpp"

namespace mtbca {

/// Position of the frequency attention relative to ReLU and BatchNorm.
enum class BlockOrder {
  /// channel attention, conv, frequency attention, ReLU, BN
  AttentionBeforeActivation,
  /// channel attention, conv, ReLU, BN, frequency attention
  AttentionAfterNorm,
};

inline const char* block_order_name(BlockOrder o) {
  return o == BlockOrder::AttentionBeforeActivation ? "attention_before_activation" : "attention_after_norm";
}

inline BlockOrder parse_block_order(const std::string& s) {
  if (s == "attention_before_activation") return BlockOrder::AttentionBeforeActivation;
  if (s == "attention_after_norm") return BlockOrder::AttentionAfterNorm;
  throw ConfigError("unknown block_order '" + s + "'");
}

struct ModelConfig {
  std::size_t in_channels = 2;
  std::vector<std::size_t> block_channels{8, 16, 32, 64};
  std::size_t kernel = 3;
  std::size_t num_classes = 27;
  std::size_t input_t = 94;
  std::size_t input_f = 64;
  bool enable_channel_attention = true;
  bool enable_frequency_attention = true;
  bool enable_reconstruction = true;
  double dropout_p = 0.5;
  std::size_t ca_reduction = 4;
  double omega = 1.0;
  bool omega_trainable = false;
  std::size_t decoder_kernel = 6;
  std::size_t decoder_stride = 2;
  std::size_t decoder_padding = 2;
  BlockOrder block_order = BlockOrder::AttentionBeforeActivation;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  std::size_t feature_dim() const { return block_channels.back(); }
  std::size_t block_in(std::size_t i) const { return i == 0 ? in_channels : block_channels[i - 1]; }
  /// Spatial size seen by block i (floor-halved i times).
  std::size_t block_t(std::size_t i) const { return input_t >> i; }
  std::size_t block_f(std::size_t i) const { return input_f >> i; }

  /// Channel widths of the decoder stages, e.g. 64 -> 32 -> 16 -> 8 -> 2.
  std::vector<std::size_t> decoder_channels() const {
    std::vector<std::size_t> c(block_channels.rbegin(), block_channels.rend());
    c.push_back(in_channels);
    return c;
  }

  void validate() const {
    if (in_channels == 0) throw ConfigError("model: in_channels must be positive");
    if (block_channels.size() != 4) throw ConfigError("model: block_channels must have length 4");
    for (std::size_t i = 0; i < block_channels.size(); ++i)
      if (block_channels[i] == 0 || (i > 0 && block_channels[i] <= block_channels[i - 1])) {
        throw ConfigError("model: block_channels must be strictly increasing and positive");
      }
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("model: kernel must be odd");
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (input_t < 16 || input_f < 16) {
      throw ConfigError("model: input (t,f) = (" + std::to_string(input_t) + "," + std::to_string(input_f) +
                        ") too small, both must be >= 16");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model: dropout_p must lie in [0,1)");
    if (!(omega > 0.0)) throw ConfigError("model: omega must be positive");
    if (decoder_kernel == 0 || decoder_stride == 0) throw ConfigError("model: decoder kernel and stride must be positive");
    if (enable_channel_attention)
      for (std::size_t i = 0; i < 4; ++i) (void)channel_attention_hidden(block_in(i), ca_reduction);
    if (enable_reconstruction) {
      std::size_t s = 1;
      for (std::size_t i = 0; i < 4; ++i) {
        if ((s - 1) * decoder_stride + decoder_kernel <= 2 * decoder_padding) {
          throw ConfigError("model: decoder geometry produces an empty output");
        }
        s = conv_transpose_out_size(s, decoder_kernel, decoder_stride, decoder_padding);
      }
    }
  }

  std::vector<std::pair<std::string, std::string>> to_kv() const {
    std::string chans;
    for (std::size_t i = 0; i < block_channels.size(); ++i) chans += (i ? "," : "") + std::to_string(block_channels[i]);
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {{"in_channels", std::to_string(in_channels)},
            {"block_channels", chans},
            {"kernel", std::to_string(kernel)},
            {"num_classes", std::to_string(num_classes)},
            {"input_t", std::to_string(input_t)},
            {"input_f", std::to_string(input_f)},
            {"channel_attention", b(enable_channel_attention)},
            {"frequency_attention", b(enable_frequency_attention)},
            {"reconstruction", b(enable_reconstruction)},
            {"dropout_p", format_double(dropout_p)},
            {"ca_reduction", std::to_string(ca_reduction)},
            {"omega", format_double(omega)},
            {"omega_trainable", b(omega_trainable)},
            {"decoder_kernel", std::to_string(decoder_kernel)},
            {"decoder_stride", std::to_string(decoder_stride)},
            {"decoder_padding", std::to_string(decoder_padding)},
            {"block_order", block_order_name(block_order)},
            {"bn_momentum", format_double(bn_momentum)},
            {"bn_epsilon", format_double(bn_epsilon)}};
  }

  /// Assign one field from its textual form; unknown keys are rejected.
  void set(const std::string& key, const std::string& value);
};

inline void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "in_channels") in_channels = parse_size(key, value);
  else if (key == "block_channels") {
    block_channels.clear();
    std::istringstream is(value);
    std::string item;
    while (std::getline(is, item, ',')) block_channels.push_back(parse_size(key, item));
  } else if (key == "kernel") kernel = parse_size(key, value);
  else if (key == "num_classes") num_classes = parse_size(key, value);
  else if (key == "input_t") input_t = parse_size(key, value);
  else if (key == "input_f") input_f = parse_size(key, value);
  else if (key == "channel_attention") enable_channel_attention = parse_bool(key, value);
  else if (key == "frequency_attention") enable_frequency_attention = parse_bool(key, value);
  else if (key == "reconstruction") enable_reconstruction = parse_bool(key, value);
  else if (key == "dropout_p") dropout_p = parse_double(key, value);
  else if (key == "ca_reduction") ca_reduction = parse_size(key, value);
  else if (key == "omega") omega = parse_double(key, value);
  else if (key == "omega_trainable") omega_trainable = parse_bool(key, value);
  else if (key == "decoder_kernel") decoder_kernel = parse_size(key, value);
  else if (key == "decoder_stride") decoder_stride = parse_size(key, value);
  else if (key == "decoder_padding") decoder_padding = parse_size(key, value);
  else if (key == "block_order") block_order = parse_block_order(value);
  else if (key == "bn_momentum") bn_momentum = parse_double(key, value);
  else if (key == "bn_epsilon") bn_epsilon = parse_double(key, value);
  else throw ConfigError("model: unknown key '" + key + "'");
}

template <typename T>
struct ConvBlockParams {
  std::optional<ChannelAttentionParams<T>> channel_attention;
  Tensor<T> conv_weight;  // [Cout,Cin,k,k]
  Tensor<T> conv_bias;    // [Cout]
  std::optional<FrequencyAttentionParams<T>> frequency_attention;
  Tensor<T> bn_gamma;
  Tensor<T> bn_shift;
  BatchNormState<T> bn_state;
};

template <typename T>
struct DecoderStage {
  Tensor<T> weight;  // [Cin,Cout,k,k]
  Tensor<T> bias;    // [Cout]
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

template <typename T>
struct ModelParams {
  std::vector<ConvBlockParams<T>> blocks;
  Tensor<T> classifier_weight;  // [C,64]
  Tensor<T> classifier_bias;    // [C]
  std::vector<DecoderStage<T>> decoder;
  /// Present exactly when reconstruction is enabled.
  std::optional<UncertaintyWeights<T>> uncertainty;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    const std::size_t k = cfg.kernel;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t cin = cfg.block_in(i), cout = cfg.block_channels[i];
      ConvBlockParams<T> b;
      if (cfg.enable_channel_attention) b.channel_attention = ChannelAttentionParams<T>::init(cin, cfg.ca_reduction, rng);
      b.conv_weight = he_uniform<T>({cout, cin, k, k}, cin * k * k, rng);
      b.conv_bias = param_filled<T>({cout}, T(0));
      if (cfg.enable_frequency_attention) {
        b.frequency_attention = FrequencyAttentionParams<T>::init(cfg.block_f(i), cfg.omega, cfg.omega_trainable, rng);
      }
      b.bn_gamma = param_filled<T>({cout}, T(1));
      b.bn_shift = param_filled<T>({cout}, T(0));
      b.bn_state = BatchNormState<T>(cout, cfg.bn_momentum, cfg.bn_epsilon);
      p.blocks.push_back(std::move(b));
    }
    const std::size_t d = cfg.feature_dim();
    // Glorot-style bound for the linear head (no ReLU follows it).
    p.classifier_weight = he_uniform<T>({cfg.num_classes, d}, d + cfg.num_classes, rng);
    p.classifier_bias = param_filled<T>({cfg.num_classes}, T(0));
    if (cfg.enable_reconstruction) {
      const auto ch = cfg.decoder_channels();
      const std::size_t dk = cfg.decoder_kernel, s = cfg.decoder_stride;
      for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
        // Each output pixel of a strided transposed conv sees about (k/s)^2 taps per input channel.
        const std::size_t fan_in = std::max<std::size_t>(1, ch[i] * dk * dk / (s * s));
        p.decoder.push_back({he_uniform<T>({ch[i], ch[i + 1], dk, dk}, fan_in, rng), param_filled<T>({ch[i + 1]}, T(0))});
      }
      p.uncertainty = UncertaintyWeights<T>::init();
    }
    return p;
  }

  /// Every tensor stored in a checkpoint, in a fixed order. Includes a frozen
  /// omega, which is not a learnable.
  std::vector<NamedTensor<T>> named_tensors() {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      const std::string p = "block" + std::to_string(i) + ".";
      if (b.channel_attention) {
        out.push_back({p + "ca.fc1.weight", &b.channel_attention->fc1_weight});
        out.push_back({p + "ca.fc1.bias", &b.channel_attention->fc1_bias});
        out.push_back({p + "ca.fc2.weight", &b.channel_attention->fc2_weight});
        out.push_back({p + "ca.fc2.bias", &b.channel_attention->fc2_bias});
      }
      out.push_back({p + "conv.weight", &b.conv_weight});
      out.push_back({p + "conv.bias", &b.conv_bias});
      if (b.frequency_attention) {
        out.push_back({p + "fa.score.weight", &b.frequency_attention->score_weight});
        out.push_back({p + "fa.score.bias", &b.frequency_attention->score_bias});
        out.push_back({p + "fa.omega", &b.frequency_attention->omega});
      }
      out.push_back({p + "bn.gamma", &b.bn_gamma});
      out.push_back({p + "bn.shift", &b.bn_shift});
    }
    out.push_back({"classifier.weight", &classifier_weight});
    out.push_back({"classifier.bias", &classifier_bias});
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      out.push_back({"decoder" + std::to_string(i) + ".weight", &decoder[i].weight});
      out.push_back({"decoder" + std::to_string(i) + ".bias", &decoder[i].bias});
    }
    if (uncertainty) {
      out.push_back({"uncertainty.s_cls", &uncertainty->s_cls});
      out.push_back({"uncertainty.s_recon", &uncertainty->s_recon});
    }
    return out;
  }

  std::vector<NamedBuffer<T>> named_buffers() {
    std::vector<NamedBuffer<T>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i) + ".bn.";
      out.push_back({p + "running_mean", &blocks[i].bn_state.running_mean});
      out.push_back({p + "running_var", &blocks[i].bn_state.running_var});
    }
    return out;
  }

  /// Handles to the learnables the optimizer updates.
  std::vector<Tensor<T>> trainable() {
    std::vector<Tensor<T>> out;
    for (auto& nt : named_tensors())
      if (nt.tensor->requires_grad()) out.push_back(*nt.tensor);
    return out;
  }

  std::size_t learnable_count() {
    std::size_t n = 0;
    for (auto& t : trainable()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& nt : named_tensors()) nt.tensor->zero_grad();
  }

  /// Deep copy with the same requires_grad flags.
  ModelParams clone() const {
    ModelParams c = *this;
    for (auto& nt : c.named_tensors()) {
      const bool rg = nt.tensor->requires_grad();
      *nt.tensor = nt.tensor->detach();
      nt.tensor->set_requires_grad(rg);
    }
    return c;
  }
};

/// Exact number of scalar learnables implied by the config, computed by
/// arithmetic over layer sizes (BN running stats excluded).
inline std::size_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  std::size_t n = 0;
  const std::size_t k = cfg.kernel;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t cin = cfg.block_in(i), cout = cfg.block_channels[i];
    if (cfg.enable_channel_attention) {
      const std::size_t h = channel_attention_hidden(cin, cfg.ca_reduction);
      n += 2 * h * cin + h + cin;
    }
    n += cout * cin * k * k + cout;
    if (cfg.enable_frequency_attention) {
      const std::size_t f = cfg.block_f(i);
      n += f * f + f + (cfg.omega_trainable ? 1 : 0);
    }
    n += 2 * cout;
  }
  n += cfg.num_classes * cfg.feature_dim() + cfg.num_classes;
  if (cfg.enable_reconstruction) {
    const auto ch = cfg.decoder_channels();
    for (std::size_t i = 0; i + 1 < ch.size(); ++i)
      n += ch[i] * ch[i + 1] * cfg.decoder_kernel * cfg.decoder_kernel + ch[i + 1];
    n += 2;
  }
  return n;
}

/// One encoder block followed by its 2x2 average downsample.
template <typename T>
Tensor<T> conv_block(const Tensor<T>& x, ConvBlockParams<T>& p, const ModelConfig& cfg, Mode mode) {
  require_rank(x, 4, "conv_block input");
  const std::size_t cin = p.conv_weight.dim(1);
  if (x.dim(1) != cin) {
    throw DimensionError("conv_block: input has " + std::to_string(x.dim(1)) + " channels, block expects " +
                         std::to_string(cin));
  }
  Tensor<T> h = p.channel_attention ? channel_attention(x, *p.channel_attention) : x;
  h = conv2d(h, p.conv_weight, p.conv_bias, 1, cfg.kernel / 2);
  if (cfg.block_order == BlockOrder::AttentionBeforeActivation) {
    if (p.frequency_attention) h = frequency_attention(h, *p.frequency_attention);
    h = batchnorm2d(relu(h), p.bn_gamma, p.bn_shift, p.bn_state, mode);
  } else {
    h = batchnorm2d(relu(h), p.bn_gamma, p.bn_shift, p.bn_state, mode);
    if (p.frequency_attention) h = frequency_attention(h, *p.frequency_attention);
  }
  return avg_downsample2x(h);
}

/// x[B,2,t,f] -> v[B,64].
template <typename T>
Tensor<T> encode(const Tensor<T>& x, ModelParams<T>& params, const ModelConfig& cfg, Mode mode) {
  require_rank(x, 4, "encode input");
  if (x.dim(1) != cfg.in_channels || x.dim(2) != cfg.input_t || x.dim(3) != cfg.input_f) {
    throw DimensionError("encode: input " + shape_str(x.shape()) + " does not match config (B," +
                         std::to_string(cfg.in_channels) + "," + std::to_string(cfg.input_t) + "," +
                         std::to_string(cfg.input_f) + ")");
  }
  Tensor<T> h = x;
  for (auto& b : params.blocks) h = conv_block(h, b, cfg, mode);
  return reshape(pool2d(h, PoolKind::AdaptiveAvg, 1, 1), Shape{x.dim(0), cfg.feature_dim()});
}

/// v[B,64] -> logits[B,C]; dropout on v in train mode only.
template <typename T>
Tensor<T> classify(const Tensor<T>& v, const ModelParams<T>& params, const ModelConfig& cfg, Mode mode,
                   std::uint64_t dropout_seed = 0) {
  require_rank(v, 2, "classify input");
  const Tensor<T> h = mode == Mode::Train ? dropout(v, cfg.dropout_p, true, dropout_seed) : v;
  return affine(h, params.classifier_weight, params.classifier_bias);
}

/// v[B,64] -> reconstruction[B,2,t,f].
template <typename T>
Tensor<T> reconstruct(const Tensor<T>& v, const ModelParams<T>& params, const ModelConfig& cfg) {
  if (!cfg.enable_reconstruction || params.decoder.empty()) {
    throw UsageError("reconstruct: reconstruction is disabled in this model config");
  }
  require_rank(v, 2, "reconstruct input");
  Tensor<T> h = reshape(v, Shape{v.dim(0), v.dim(1), 1, 1});
  for (std::size_t i = 0; i < params.decoder.size(); ++i) {
    h = conv_transpose2d(h, params.decoder[i].weight, params.decoder[i].bias, cfg.decoder_stride,
                         cfg.decoder_padding);
    if (i + 1 < params.decoder.size()) h = relu(h);
  }
  return bilinear_resize(h, cfg.input_t, cfg.input_f);
}

template <typename T>
struct ForwardResult {
  Tensor<T> features;
  Tensor<T> logits;
  std::optional<Tensor<T>> reconstruction;
};

template <typename T>
ForwardResult<T> forward(const Tensor<T>& x, ModelParams<T>& params, const ModelConfig& cfg, Mode mode,
                         std::uint64_t dropout_seed = 0) {
  ForwardResult<T> r;
  r.features = encode(x, params, cfg, mode);
  r.logits = classify(r.features, params, cfg, mode, dropout_seed);
  if (cfg.enable_reconstruction) r.reconstruction = reconstruct(r.features, params, cfg);
  return r;
}

}  // namespace mtbca
