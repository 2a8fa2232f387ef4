#include "relu_sculpt/bcd.hpp"

#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "relu_sculpt/engine.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/parallel.hpp"
#include "relu_sculpt/report.hpp"

namespace relu_sculpt {

using nlohmann::json;

void BcdConfig::validate() const {
  if (drc < 1) throw ConfigError("bcd: drc must be >= 1");
  if (rt < 1) throw ConfigError("bcd: rt must be >= 1");
  // Negative tolerances are allowed: they disable early acceptance.
  if (!std::isfinite(adt_percent)) throw ConfigError("bcd: adt_percent must be finite");
  if (eval_subset_size && *eval_subset_size == 0) throw ConfigError("bcd: eval_subset_size must be positive");
  finetune.validate();
}

BcdConfig bcd_config_from_json(const json& j) {
  static const std::set<std::string> keys{"drc", "adt_percent", "rt", "b_target", "finetune", "eval_subset_size", "seed"};
  if (!j.is_object()) throw ConfigError("bcd config must be an object");
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) throw ConfigError("bcd config: unknown key '" + k + "'");
  }
  BcdConfig cfg;
  cfg.drc = j.value("drc", cfg.drc);
  cfg.adt_percent = j.value("adt_percent", cfg.adt_percent);
  cfg.rt = j.value("rt", cfg.rt);
  if (!j.contains("b_target")) throw ConfigError("bcd config: missing 'b_target'");
  cfg.b_target = j.at("b_target").get<std::size_t>();
  if (j.contains("finetune")) cfg.finetune = train_config_from_json(j.at("finetune"));
  if (j.contains("eval_subset_size")) {
    const auto& e = j.at("eval_subset_size");
    if (e.is_string()) {
      if (e != "full") throw ConfigError("bcd config: eval_subset_size must be a count or \"full\"");
    } else {
      cfg.eval_subset_size = e.get<std::size_t>();
    }
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

json to_json(const BcdConfig& cfg) {
  return {{"drc", cfg.drc},
          {"adt_percent", cfg.adt_percent},
          {"rt", cfg.rt},
          {"b_target", cfg.b_target},
          {"finetune", to_json(cfg.finetune)},
          {"eval_subset_size", cfg.eval_subset_size ? json(*cfg.eval_subset_size) : json("full")},
          {"seed", cfg.seed}};
}

std::size_t num_steps(std::size_t b_ref, std::size_t b_target, std::size_t drc) {
  if (drc < 1) throw PreconditionError("num_steps: drc must be >= 1");
  if (b_ref < b_target) {
    throw PreconditionError("num_steps: b_ref " + std::to_string(b_ref) + " is below b_target " +
                            std::to_string(b_target));
  }
  return (b_ref - b_target + drc - 1) / drc;
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t step, std::size_t trial) {
  return rng::derive(seed, "bcd-trial", {step, trial});
}

namespace {

TrialResult run_trial(const Network& net, const Parameters& params, const ReluMask& mask, const Dataset& eval,
                      std::size_t baseline_correct, std::size_t k, std::uint64_t seed) {
  rng::Stream stream(seed);
  TrialResult t;
  t.removal = sample_removal(mask, k, stream);
  const ReluMask hypothesis = apply_removal(mask, t.removal);
  const std::size_t correct = count_correct(net, params, SoftMask::from_mask(hypothesis), eval);
  // Integer difference first so the percentage is independent of evaluation order.
  const double n = static_cast<double>(eval.size());
  t.delta_acc = 100.0 * (static_cast<double>(baseline_correct) - static_cast<double>(correct)) / n;
  return t;
}

}  // namespace

StepOutcome bcd_step(const Network& net, const Parameters& params, const ReluMask& mask, const Dataset& eval,
                     const BcdConfig& cfg, std::size_t step_index) {
  if (mask.l0() <= cfg.b_target) throw PreconditionError("bcd_step: mask is already at or below the target budget");
  if (eval.empty()) throw PreconditionError("bcd_step: empty evaluation set");
  const std::size_t k = std::min(cfg.drc, mask.l0() - cfg.b_target);
  const std::size_t baseline = count_correct(net, params, SoftMask::from_mask(mask), eval, cfg.threads);

  StepOutcome out;
  out.baseline_acc = 100.0 * static_cast<double>(baseline) / static_cast<double>(eval.size());
  const std::size_t wave = std::max<std::size_t>(1, cfg.threads);
  for (std::size_t first = 0; first < cfg.rt; first += wave) {
    const std::size_t count = std::min(wave, cfg.rt - first);
    std::vector<TrialResult> batch(count);
    parallel_chunks(count, wave, [&](std::size_t b, std::size_t e, std::size_t) {
      for (std::size_t i = b; i < e; ++i) {
        batch[i] = run_trial(net, params, mask, eval, baseline, k, trial_seed(cfg.seed, step_index, first + i));
      }
    });
    // Resolve in trial order so the outcome matches serial execution.
    for (auto& t : batch) {
      out.trials.push_back(std::move(t));
      if (out.trials.back().delta_acc < cfg.adt_percent) {
        out.chosen = out.trials.size() - 1;
        out.accepted_early = true;
        return out;
      }
    }
  }
  out.chosen = 0;
  for (std::size_t i = 1; i < out.trials.size(); ++i) {
    if (out.trials[i].delta_acc < out.trials[out.chosen].delta_acc) out.chosen = i;
  }
  return out;
}

BcdResult bcd_run(const Network& net, Parameters params, const ReluMask& m_ref, const Dataset& train,
                  const BcdConfig& cfg, const BcdObserver& observer) {
  cfg.validate();
  if (train.empty()) throw PreconditionError("bcd_run: empty dataset");
  if (cfg.b_target > m_ref.l0()) {
    throw PreconditionError("bcd_run: b_target " + std::to_string(cfg.b_target) + " exceeds the current budget " +
                            std::to_string(m_ref.l0()));
  }
  const Dataset eval = cfg.eval_subset_size ? subset(train, std::min(*cfg.eval_subset_size, train.size()),
                                                     rng::derive(cfg.seed, "bcd-eval"))
                                            : train;
  BcdResult result{std::move(params), m_ref, {}};
  result.log.b_ref = m_ref.l0();
  const std::size_t steps = num_steps(m_ref.l0(), cfg.b_target, cfg.drc);
  for (std::size_t t = 1; t <= steps; ++t) {
    const StepOutcome step = bcd_step(net, result.params, result.mask, eval, cfg, t);
    const TrialResult& chosen = step.chosen_trial();

    BcdIteration it;
    it.step = t;
    it.budget_before = result.mask.l0();
    result.mask = apply_removal(result.mask, chosen.removal);
    it.budget_after = result.mask.l0();
    it.trials_used = step.trials.size();
    it.chosen_delta_acc = chosen.delta_acc;
    it.accepted_early = step.accepted_early;
    it.acc_before_finetune = step.baseline_acc - chosen.delta_acc;

    if (cfg.finetune.epochs > 0) {
      TrainConfig ft = cfg.finetune;
      ft.seed = rng::derive(cfg.finetune.seed, "bcd-finetune", {t});
      result.params = finetune(net, std::move(result.params), result.mask, train, ft);
      it.acc_after_finetune = evaluate_accuracy(net, result.params, result.mask, eval, cfg.threads);
    } else {
      it.acc_after_finetune = it.acc_before_finetune;
    }
    spdlog::debug("bcd step {}/{}: budget {} -> {}, trials {}, delta {:.3f}%, acc {:.2f}% -> {:.2f}%", t, steps,
                  it.budget_before, it.budget_after, it.trials_used, it.chosen_delta_acc, it.acc_before_finetune,
                  it.acc_after_finetune);
    result.log.iterations.push_back(it);
    result.log.checkpoints.push_back(result.mask);
    if (observer) observer(it);
  }
  return result;
}

json to_json(const BcdRunLog& log) {
  json iters = json::array();
  for (const auto& it : log.iterations) {
    iters.push_back({{"step", it.step},
                     {"budget_before", it.budget_before},
                     {"budget_after", it.budget_after},
                     {"trials_used", it.trials_used},
                     {"chosen_delta_acc", it.chosen_delta_acc},
                     {"accepted_early", it.accepted_early},
                     {"acc_before_finetune", it.acc_before_finetune},
                     {"acc_after_finetune", it.acc_after_finetune}});
  }
  return {{"b_ref", log.b_ref}, {"iterations", iters}};
}

std::string budget_accuracy_csv(const BcdRunLog& log) {
  std::string out = "step,budget,acc_before_finetune,acc_after_finetune,trials_used\n";
  for (const auto& it : log.iterations) {
    out += std::to_string(it.step) + "," + std::to_string(it.budget_after) + "," + format_real(it.acc_before_finetune) +
           "," + format_real(it.acc_after_finetune) + "," + std::to_string(it.trials_used) + "\n";
  }
  return out;
}

}  // namespace relu_sculpt
