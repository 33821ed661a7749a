#pragma once

// Mini-batch training loop with the uncertainty-weighted joint objective.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mtbca/adam.hpp"
#include "mtbca/audio/mel.hpp"
#include "mtbca/losses.hpp"
#include "mtbca/model.hpp"
#include "mtbca/parse.hpp"

namespace mtbca {

enum class LossWeighting { Uncertainty, Fixed };

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 100;
  double lr_initial = 1e-3;
  double lr_after = 1e-4;
  std::size_t lr_decay_epoch = 30;
  std::uint64_t seed = 42;
  bool shuffle = true;
  LossWeighting weighting = LossWeighting::Uncertainty;
  double lambda0 = 1.0;
  double lambda1 = 1.0;
  bool early_stop = false;
  std::size_t patience = 15;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 for batch normalization");
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (!(lr_initial > 0.0 && lr_after > 0.0)) throw ConfigError("train: learning rates must be positive");
    if (!(lambda0 >= 0.0 && lambda1 >= 0.0)) throw ConfigError("train: fixed loss weights must be >= 0");
  }

  std::vector<std::pair<std::string, std::string>> to_kv() const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {{"batch_size", std::to_string(batch_size)},
            {"epochs", std::to_string(epochs)},
            {"lr_initial", format_double(lr_initial)},
            {"lr_after", format_double(lr_after)},
            {"lr_decay_epoch", std::to_string(lr_decay_epoch)},
            {"shuffle", b(shuffle)},
            {"weighting", weighting == LossWeighting::Uncertainty ? "uncertainty" : "fixed"},
            {"lambda0", format_double(lambda0)},
            {"lambda1", format_double(lambda1)},
            {"early_stop", b(early_stop)},
            {"patience", std::to_string(patience)},
            {"beta1", format_double(beta1)},
            {"beta2", format_double(beta2)},
            {"adam_epsilon", format_double(adam_epsilon)}};
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "batch_size") batch_size = parse_size(key, value);
    else if (key == "epochs") epochs = parse_size(key, value);
    else if (key == "lr_initial") lr_initial = parse_double(key, value);
    else if (key == "lr_after") lr_after = parse_double(key, value);
    else if (key == "lr_decay_epoch") lr_decay_epoch = parse_size(key, value);
    else if (key == "shuffle") shuffle = parse_bool(key, value);
    else if (key == "weighting") {
      if (value == "uncertainty") weighting = LossWeighting::Uncertainty;
      else if (value == "fixed") weighting = LossWeighting::Fixed;
      else throw ConfigError("train: weighting must be 'uncertainty' or 'fixed', got '" + value + "'");
    } else if (key == "lambda0") lambda0 = parse_double(key, value);
    else if (key == "lambda1") lambda1 = parse_double(key, value);
    else if (key == "early_stop") early_stop = parse_bool(key, value);
    else if (key == "patience") patience = parse_size(key, value);
    else if (key == "beta1") beta1 = parse_double(key, value);
    else if (key == "beta2") beta2 = parse_double(key, value);
    else if (key == "adam_epsilon") adam_epsilon = parse_double(key, value);
    else throw ConfigError("train: unknown key '" + key + "'");
  }
};

/// Step schedule: lr_initial before lr_decay_epoch, lr_after from then on.
inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return epoch < cfg.lr_decay_epoch ? cfg.lr_initial : cfg.lr_after;
}

/// Labelled feature tensors packed contiguously, N x 2 x t x f.
struct FeatureSet {
  std::size_t t = 0;
  std::size_t f = 0;
  std::vector<float> values;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return 2 * t * f; }

  void add(const audio::FeatureTensor& ft, int label) {
    if (labels.empty() && t == 0) {
      t = ft.t;
      f = ft.f;
    }
    if (ft.t != t || ft.f != f) {
      throw DimensionError("FeatureSet: tensor (" + std::to_string(ft.t) + "," + std::to_string(ft.f) +
                           ") does not match set shape (" + std::to_string(t) + "," + std::to_string(f) + ")");
    }
    values.insert(values.end(), ft.values.begin(), ft.values.end());
    labels.push_back(label);
  }

  Tensor<float> batch(std::span<const std::size_t> idx) const {
    const std::size_t n = sample_size();
    std::vector<float> out(idx.size() * n);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n,
                  out.begin() + static_cast<std::ptrdiff_t>(i * n));
    return Tensor<float>(Shape{idx.size(), 2, t, f}, std::move(out));
  }

  std::vector<int> batch_labels(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels[i]);
    return out;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  /// Fraction of training samples classified correctly in train mode
  /// (dropout active) during the epoch.
  double accuracy = 0.0;
  double rho_cls = 1.0;
  double rho_recon = 1.0;
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,L1,L2,L_total,acc,rho_cls,rho_recon,lr\n";
    for (const auto& r : epochs)
      os << r.epoch << ',' << format_double(r.l1) << ',' << format_double(r.l2) << ',' << format_double(r.total) << ','
         << format_double(r.accuracy) << ',' << format_double(r.rho_cls) << ',' << format_double(r.rho_recon) << ','
         << format_double(r.lr) << '\n';
    return os.str();
  }
};

/// Contiguous batches over `order`. A trailing batch of one sample is merged
/// into the previous batch so that batch statistics stay defined.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

inline std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

struct StepLosses {
  Tensor<float> l1;
  Tensor<float> l2;
  Tensor<float> total;
  Tensor<float> logits;
};

/// Forward pass plus objective for one batch in train mode.
inline StepLosses compute_losses(const Tensor<float>& x, std::span<const int> labels, ModelParams<float>& params,
                                 const ModelConfig& cfg, const TrainConfig& tc, std::uint64_t dropout_seed) {
  auto fr = forward(x, params, cfg, Mode::Train, dropout_seed);
  StepLosses s;
  s.logits = fr.logits;
  s.l1 = cross_entropy(fr.logits, labels);
  if (fr.reconstruction) {
    s.l2 = mse_recon(*fr.reconstruction, x);
    if (tc.weighting == LossWeighting::Uncertainty) {
      s.total = total_loss(s.l1, s.l2, *params.uncertainty);
    } else {
      s.total = total_loss_fixed(s.l1, s.l2, static_cast<float>(tc.lambda0), static_cast<float>(tc.lambda1));
    }
  } else {
    s.l2 = Tensor<float>::scalar(0.0f);
    s.total = s.l1;
  }
  return s;
}

/// Tensors Adam updates. Fixed weighting leaves the uncertainty terms out of
/// the objective, so they get no gradient and stay at their initial values.
inline std::vector<Tensor<float>> optimized_params(ModelParams<float>& params, const TrainConfig& tc) {
  auto all = params.trainable();
  if (tc.weighting != LossWeighting::Fixed || !params.uncertainty) return all;
  std::vector<Tensor<float>> out;
  for (auto& t : all)
    if (t.node() != params.uncertainty->s_cls.node() && t.node() != params.uncertainty->s_recon.node())
      out.push_back(t);
  return out;
}

struct TrainResult {
  ModelParams<float> params;
  TrainHistory history;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const ModelConfig& cfg, const FeatureSet& data, const TrainConfig& tc,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  tc.validate();
  if (data.size() == 0) throw DataError("train: training set is empty");
  if (data.t != cfg.input_t || data.f != cfg.input_f) {
    throw ConfigError("train: features are (" + std::to_string(data.t) + "," + std::to_string(data.f) +
                      ") but the model expects (" + std::to_string(cfg.input_t) + "," + std::to_string(cfg.input_f) +
                      ")");
  }
  if (data.size() < 2) throw DataError("train: need at least 2 samples for batch normalization");

  TrainResult res{ModelParams<float>::init(cfg, tc.seed), {}, false};
  auto trainable = optimized_params(res.params, tc);
  AdamState<float> adam;
  adam.beta1 = tc.beta1;
  adam.beta2 = tc.beta2;
  adam.epsilon = tc.adam_epsilon;

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, tc);
    adam.learning_rate = lr;
    if (tc.shuffle) seeded_shuffle(order, mix_seed(tc.seed, 0x5eed0000ULL + epoch));
    const auto batches = make_batches(order, tc.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    std::size_t correct = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& idx = batches[bi];
      const auto labels = data.batch_labels(idx);
      const auto x = data.batch(idx);
      try {
        res.params.zero_grad();
        auto s = compute_losses(x, labels, res.params, cfg, tc, mix_seed(tc.seed, step));
        if (!std::isfinite(s.total.item())) throw NumericError("non-finite total loss");
        s.total.backward();
        adam_step(std::span<Tensor<float>>(trainable), adam);
        const double w = static_cast<double>(idx.size());
        rec.l1 += w * s.l1.item();
        rec.l2 += w * s.l2.item();
        rec.total += w * s.total.item();
        const auto lg = s.logits.data();
        const std::size_t C = cfg.num_classes;
        for (std::size_t i = 0; i < idx.size(); ++i)
          if (static_cast<int>(argmax_row(lg.subspan(i * C, C))) == labels[i]) ++correct;
      } catch (const NumericError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                            ", lr " + format_double(lr) + ": " + e.what());
      }
      ++step;
    }
    const double n = static_cast<double>(data.size());
    rec.l1 /= n;
    rec.l2 /= n;
    rec.total /= n;
    rec.accuracy = static_cast<double>(correct) / n;
    if (res.params.uncertainty) {
      rec.rho_cls = res.params.uncertainty->rho_cls();
      rec.rho_recon = res.params.uncertainty->rho_recon();
    }
    res.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (tc.early_stop) {
      if (rec.total < best - 1e-9) {
        best = rec.total;
        since_best = 0;
      } else if (++since_best >= tc.patience) {
        res.stopped_early = true;
        break;
      }
    }
  }
  res.params.zero_grad();
  return res;
}

/// Eval-mode class probabilities, row-major N x C.
inline std::vector<float> predict_proba(ModelParams<float>& params, const ModelConfig& cfg, const FeatureSet& data,
                                        std::size_t batch_size = 32) {
  NoGradGuard guard;
  std::vector<float> out;
  out.reserve(data.size() * cfg.num_classes);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto x = data.batch(idx);
    const auto v = encode(x, params, cfg, Mode::Eval);
    const auto p = softmax(classify(v, params, cfg, Mode::Eval), 1);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return out;
}

inline std::vector<int> predict(ModelParams<float>& params, const ModelConfig& cfg, const FeatureSet& data,
                                std::size_t batch_size = 32) {
  const auto p = predict_proba(params, cfg, data, batch_size);
  std::vector<int> out(data.size());
  const std::size_t C = cfg.num_classes;
  for (std::size_t i = 0; i < data.size(); ++i)
    out[i] = static_cast<int>(argmax_row(std::span<const float>(p).subspan(i * C, C)));
  return out;
}

struct OverfitResult {
  std::size_t steps = 0;
  double final_l1 = 0.0;
  bool reached = false;
};

/// Repeatedly fits one fixed batch; stops once the classification loss of a
/// step drops below `target`.
inline OverfitResult overfit_batch(const ModelConfig& cfg, const FeatureSet& data, std::span<const std::size_t> idx,
                                   const TrainConfig& tc, std::size_t max_steps = 300, double target = 0.01) {
  auto params = ModelParams<float>::init(cfg, tc.seed);
  auto trainable = optimized_params(params, tc);
  AdamState<float> adam;
  adam.learning_rate = tc.lr_initial;
  const auto x = data.batch(idx);
  const auto labels = data.batch_labels(idx);
  OverfitResult r;
  for (std::size_t step = 0; step < max_steps; ++step) {
    params.zero_grad();
    auto s = compute_losses(x, labels, params, cfg, tc, mix_seed(tc.seed, step));
    r.final_l1 = s.l1.item();
    r.steps = step + 1;
    if (r.final_l1 < target) {
      r.reached = true;
      break;
    }
    s.total.backward();
    adam_step(std::span<Tensor<float>>(trainable), adam);
  }
  return r;
}

}  // namespace mtbca
