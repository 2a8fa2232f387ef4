#include "relu_sculpt/selective.hpp"

#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "relu_sculpt/error.hpp"

namespace relu_sculpt {

using nlohmann::json;

void SnlConfig::validate() const {
  if (!(lambda0 > 0.0)) throw ConfigError("snl: lambda0 must be > 0");
  if (!(kappa > 1.0)) throw ConfigError("snl: kappa must be > 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("snl: threshold must lie in (0, 1)");
  if (budget_check_interval < 1) throw ConfigError("snl: budget_check_interval must be >= 1");
  if (alpha_lr && !(*alpha_lr >= 0.0)) throw ConfigError("snl: alpha_lr must be >= 0");
  if (hysteresis && !(hysteresis->t_h >= 0.0)) throw ConfigError("snl: hysteresis t_h must be >= 0");
  train.validate();
}

SnlConfig snl_config_from_json(const json& j) {
  static const std::set<std::string> keys{"lambda0",  "kappa",    "threshold",  "epochs",     "budget_check_interval",
                                          "stall_min_decrease", "b_target", "train", "alpha_lr", "hysteresis"};
  if (!j.is_object()) throw ConfigError("snl config must be an object");
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) throw ConfigError("snl config: unknown key '" + k + "'");
  }
  SnlConfig cfg;
  cfg.lambda0 = j.value("lambda0", cfg.lambda0);
  cfg.kappa = j.value("kappa", cfg.kappa);
  cfg.threshold = j.value("threshold", cfg.threshold);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.budget_check_interval = j.value("budget_check_interval", cfg.budget_check_interval);
  if (j.contains("stall_min_decrease")) cfg.stall_min_decrease = j.at("stall_min_decrease").get<std::size_t>();
  if (!j.contains("b_target")) throw ConfigError("snl config: missing 'b_target'");
  cfg.b_target = j.at("b_target").get<std::size_t>();
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  if (j.contains("alpha_lr")) cfg.alpha_lr = j.at("alpha_lr").get<double>();
  if (j.contains("hysteresis")) {
    const auto& h = j.at("hysteresis");
    for (const auto& [k, _] : h.items()) {
      if (k != "t_h") throw ConfigError("snl config: unknown hysteresis key '" + k + "'");
    }
    cfg.hysteresis = HysteresisConfig{h.value("t_h", 0.1)};
  }
  cfg.validate();
  return cfg;
}

json to_json(const SnlConfig& cfg) {
  json j{{"lambda0", cfg.lambda0},
         {"kappa", cfg.kappa},
         {"threshold", cfg.threshold},
         {"epochs", cfg.epochs},
         {"budget_check_interval", cfg.budget_check_interval},
         {"b_target", cfg.b_target},
         {"train", to_json(cfg.train)}};
  if (cfg.stall_min_decrease) j["stall_min_decrease"] = *cfg.stall_min_decrease;
  if (cfg.alpha_lr) j["alpha_lr"] = *cfg.alpha_lr;
  if (cfg.hysteresis) j["hysteresis"] = {{"t_h", cfg.hysteresis->t_h}};
  return j;
}

std::size_t effective_budget(const SoftMask& alpha, double threshold) {
  std::size_t n = 0;
  for (const auto& l : alpha.layers) {
    for (float a : l) n += static_cast<double>(a) > threshold ? 1 : 0;
  }
  return n;
}

ReluMask binarize(const SoftMask& alpha, double threshold, const ReluMask& shape) {
  return ReluMask::from_predicate(shape.layers(), [&](std::size_t l, std::size_t s) {
    return static_cast<double>(alpha.layers[l][s]) > threshold;
  });
}

template <typename T>
T snl_loss(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& alpha, std::span<const T> x,
           std::size_t label, T lambda) {
  if (lambda < T(0)) throw PreconditionError("snl_loss: lambda must be >= 0");
  Trace<T> trace;
  const auto& logits = forward(net, params, alpha, x, trace);
  return loss_ce(logits.values(), label) + lambda * static_cast<T>(alpha.l1());
}

template float snl_loss<float>(const Network&, const Parameters&, const SoftMask&, std::span<const float>, std::size_t,
                               float);
template double snl_loss<double>(const Network&, const ParametersD&, const SoftMaskD&, std::span<const double>,
                                 std::size_t, double);

bool hysteresis_update(bool current, double m_w, double t_h) {
  if (t_h < 0.0) throw PreconditionError("hysteresis_update: t_h must be >= 0");
  return current ? m_w > -t_h : m_w > t_h;
}

namespace {

std::size_t stall_threshold(const SnlConfig& cfg, std::size_t budget) {
  if (cfg.stall_min_decrease) return *cfg.stall_min_decrease;
  return std::max<std::size_t>(1, budget / 100);
}

}  // namespace

SnlResult snl_run(const Network& net, Parameters params, const Dataset& train, const SnlConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw PreconditionError("snl_run: empty dataset");
  const ReluMask shape = all_ones(net);
  SoftMask alpha = SoftMask::filled(net, 1.0f);
  ReluMask state = shape;  // hysteresis indicator state

  auto current_mask = [&] { return cfg.hysteresis ? state : binarize(alpha, cfg.threshold, shape); };

  SnlResult result;
  double lambda = cfg.lambda0;
  ReluMask mask = current_mask();
  result.checkpoints.push_back({0, mask, mask.l0(), evaluate_accuracy(net, params, mask, train), lambda});

  Parameters grads = Parameters::zeros(net);
  SoftMask alpha_grads = SoftMask::filled(net, 0.0f);
  Optimizer theta_opt(cfg.train, params.spans());
  Optimizer alpha_opt(cfg.train, alpha.spans());
  const auto theta_grad_spans = grads.spans();
  const auto alpha_grad_spans = alpha_grads.spans();
  const double alpha_lr_max = cfg.alpha_lr.value_or(cfg.train.lr_max);
  const double alpha_scale = cfg.train.lr_max > 0.0 ? alpha_lr_max / cfg.train.lr_max : 0.0;

  const std::size_t per_epoch = batches_per_epoch(train.size(), cfg.train.batch_size);
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * per_epoch);
  std::size_t last_check_budget = mask.l0();
  std::size_t step = 0;
  Trace<float> trace;

  std::size_t epoch = 0;
  while (mask.l0() > cfg.b_target && epoch < cfg.epochs) {
    const auto order = epoch_order(train.size(), rng::derive(cfg.train.seed, "snl-order"), epoch);
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t begin = b * cfg.train.batch_size;
      const std::size_t end = std::min(train.size(), begin + cfg.train.batch_size);
      grads.fill(0.0f);
      alpha_grads.fill(0.0f);
      const float scale = 1.0f / static_cast<float>(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t idx = order[i];
        forward(net, params, alpha, train.sample(idx), trace);
        backward(net, params, alpha, trace, train.labels[idx], grads, &alpha_grads, scale);
      }
      // d/d alpha of lambda * sum|alpha| with alpha >= 0.
      const float l1_grad = static_cast<float>(lambda);
      for (auto& l : alpha_grads.layers) {
        for (float& g : l) g += l1_grad;
      }
      const double lr = cosine_lr(std::min(step, total_steps), total_steps, cfg.train.lr_max, cfg.train.lr_min);
      theta_opt.step(theta_grad_spans, lr);
      alpha_opt.step(alpha_grad_spans, lr * alpha_scale);
      alpha.clamp01();
    }
    ++epoch;

    if (cfg.hysteresis) {
      const ReluMask prev = state;
      state = ReluMask::from_predicate(shape.layers(), [&](std::size_t l, std::size_t s) {
        return hysteresis_update(prev.test(l, s), static_cast<double>(alpha.layers[l][s]) - cfg.threshold,
                                 cfg.hysteresis->t_h);
      });
    }
    mask = current_mask();
    if (epoch % cfg.budget_check_interval == 0) {
      if (last_check_budget < mask.l0() + stall_threshold(cfg, last_check_budget)) lambda *= cfg.kappa;
      last_check_budget = mask.l0();
    }
    result.lambda_history.push_back(lambda);
    result.checkpoints.push_back({epoch, mask, mask.l0(), evaluate_accuracy(net, params, mask, train), lambda});
    spdlog::debug("snl epoch {}: budget {} lambda {}", epoch, mask.l0(), lambda);
  }
  result.epochs_run = epoch;
  result.target_reached = mask.l0() <= cfg.b_target;

  result.acc_before_binarization = evaluate_accuracy(net, params, alpha, train);
  result.acc_after_binarization = evaluate_accuracy(net, params, mask, train);
  if (cfg.train.epochs > 0) {
    TrainConfig ft = cfg.train;
    ft.seed = rng::derive(cfg.train.seed, "snl-finetune");
    params = finetune(net, std::move(params), mask, train, ft);
  }
  result.acc_after_finetune = evaluate_accuracy(net, params, mask, train);
  result.params = std::move(params);
  result.mask = std::move(mask);
  return result;
}

std::vector<std::vector<double>> iou_matrix(const std::vector<MaskCheckpoint>& checkpoints) {
  if (checkpoints.empty()) throw PreconditionError("iou_matrix: no checkpoints");
  const std::size_t n = checkpoints.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool i_smaller = checkpoints[i].mask.l0() <= checkpoints[j].mask.l0();
      const ReluMask& small = i_smaller ? checkpoints[i].mask : checkpoints[j].mask;
      const ReluMask& large = i_smaller ? checkpoints[j].mask : checkpoints[i].mask;
      out[i][j] = iou(small, large);
    }
  }
  return out;
}

std::vector<double> consecutive_iou(const std::vector<MaskCheckpoint>& checkpoints) {
  std::vector<double> out;
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    const ReluMask& a = checkpoints[i - 1].mask;
    const ReluMask& b = checkpoints[i].mask;
    out.push_back(a.l0() <= b.l0() ? iou(a, b) : iou(b, a));
  }
  return out;
}

}  // namespace relu_sculpt
