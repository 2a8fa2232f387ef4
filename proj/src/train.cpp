#include "relu_sculpt/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "relu_sculpt/error.hpp"
#include "relu_sculpt/rng.hpp"

namespace relu_sculpt {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr_min >= 0.0)) throw ConfigError("train: lr_min must be >= 0");
  if (!(lr_max >= lr_min)) throw ConfigError("train: lr_max must be >= lr_min");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (const auto* s = std::get_if<SgdConfig>(&optimizer); s && !(s->momentum >= 0.0 && s->momentum < 1.0)) {
    throw ConfigError("train: momentum must lie in [0, 1)");
  }
  if (const auto* a = std::get_if<AdamConfig>(&optimizer)) {
    if (!(a->beta1 >= 0.0 && a->beta1 < 1.0 && a->beta2 >= 0.0 && a->beta2 < 1.0 && a->eps > 0.0)) {
      throw ConfigError("train: invalid Adam hyperparameters");
    }
  }
}

TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> keys{"optimizer", "momentum", "beta1", "beta2", "eps", "lr_max",
                                          "lr_min",    "epochs",   "batch_size", "seed"};
  if (!j.is_object()) throw ConfigError("train config must be an object");
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) throw ConfigError("train config: unknown key '" + k + "'");
  }
  TrainConfig cfg;
  const std::string opt = j.value("optimizer", std::string("sgd"));
  if (opt == "sgd") {
    if (j.contains("beta1") || j.contains("beta2") || j.contains("eps")) {
      throw ConfigError("train config: Adam keys given for the sgd optimizer");
    }
    cfg.optimizer = SgdConfig{j.value("momentum", 0.9)};
  } else if (opt == "adam") {
    if (j.contains("momentum")) throw ConfigError("train config: 'momentum' given for the adam optimizer");
    cfg.optimizer = AdamConfig{j.value("beta1", 0.9), j.value("beta2", 0.999), j.value("eps", 1e-8)};
  } else {
    throw ConfigError("train config: unknown optimizer '" + opt + "'");
  }
  cfg.lr_max = j.value("lr_max", cfg.lr_max);
  cfg.lr_min = j.value("lr_min", cfg.lr_min);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  json j{{"lr_max", cfg.lr_max},
         {"lr_min", cfg.lr_min},
         {"epochs", cfg.epochs},
         {"batch_size", cfg.batch_size},
         {"seed", cfg.seed}};
  if (const auto* s = std::get_if<SgdConfig>(&cfg.optimizer)) {
    j["optimizer"] = "sgd";
    j["momentum"] = s->momentum;
  } else {
    const auto& a = std::get<AdamConfig>(cfg.optimizer);
    j["optimizer"] = "adam";
    j["beta1"] = a.beta1;
    j["beta2"] = a.beta2;
    j["eps"] = a.eps;
  }
  return j;
}

double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min) {
  if (total < 1) throw PreconditionError("cosine_lr: total must be >= 1");
  if (step > total) throw PreconditionError("cosine_lr: step exceeds total");
  if (step == total) return lr_min;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<std::span<float>> params)
    : kind_(cfg.optimizer), params_(std::move(params)) {
  for (const auto& p : params_) {
    first_.emplace_back(p.size(), 0.0f);
    if (std::holds_alternative<AdamConfig>(kind_)) second_.emplace_back(p.size(), 0.0f);
  }
}

void Optimizer::step(const std::vector<std::span<float>>& grads, double lr) {
  if (grads.size() != params_.size()) throw PreconditionError("optimizer: gradient list does not match parameters");
  ++steps_;
  if (const auto* sgd = std::get_if<SgdConfig>(&kind_)) {
    const float mu = static_cast<float>(sgd->momentum);
    const float rate = static_cast<float>(lr);
    for (std::size_t t = 0; t < params_.size(); ++t) {
      auto p = params_[t];
      const auto g = grads[t];
      auto& v = first_[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        p[i] -= rate * v[i];
      }
    }
    return;
  }
  const auto& adam = std::get<AdamConfig>(kind_);
  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(steps_));
  const float b1 = static_cast<float>(adam.beta1), b2 = static_cast<float>(adam.beta2);
  const float step_size = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float eps = static_cast<float>(adam.eps);
  for (std::size_t t = 0; t < params_.size(); ++t) {
    auto p = params_[t];
    const auto g = grads[t];
    auto& m = first_[t];
    auto& v = second_[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng::Stream stream(seed, "epoch-order", {epoch});
  rng::shuffle(std::span<std::size_t>(order), stream);
  return order;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

Parameters finetune(const Network& net, Parameters params, const ReluMask& mask, const Dataset& ds,
                    const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.epochs == 0 || ds.empty()) return params;
  const SoftMask gates = SoftMask::from_mask(mask);
  Parameters grads = Parameters::zeros(net);
  Optimizer opt(cfg, params.spans());
  const auto grad_spans = grads.spans();
  const std::size_t per_epoch = batches_per_epoch(ds.size(), cfg.batch_size);
  const std::size_t total = cfg.epochs * per_epoch;
  Trace<float> trace;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(ds.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(ds.size(), begin + cfg.batch_size);
      grads.fill(0.0f);
      const float scale = 1.0f / static_cast<float>(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t idx = order[i];
        forward(net, params, gates, ds.sample(idx), trace);
        backward(net, params, gates, trace, ds.labels[idx], grads, static_cast<SoftMask*>(nullptr), scale);
      }
      opt.step(grad_spans, cosine_lr(step, total, cfg.lr_max, cfg.lr_min));
    }
  }
  return params;
}

}  // namespace relu_sculpt
