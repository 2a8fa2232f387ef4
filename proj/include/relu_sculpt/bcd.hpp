#pragma once

// Block coordinate descent over binary ReLU masks. Each iteration samples up
// to `rt` candidate blocks of `drc` live sites, accepts the first whose
// removal costs less than `adt_percent` training accuracy (falling back to
// the least harmful candidate), clears it, and finetunes theta. Removed sites
// are never revisited, so the checkpoint masks form a subset chain.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "relu_sculpt/dataset.hpp"
#include "relu_sculpt/mask.hpp"
#include "relu_sculpt/network.hpp"
#include "relu_sculpt/parameters.hpp"
#include "relu_sculpt/train.hpp"

#include <json.hpp>

namespace relu_sculpt {

struct BcdConfig {
  std::size_t drc = 100;
  double adt_percent = 0.3;
  std::size_t rt = 50;
  std::size_t b_target = 0;
  TrainConfig finetune{};
  std::optional<std::size_t> eval_subset_size;  // nullopt: full training set
  std::uint64_t seed = 0;
  std::size_t threads = 1;  // trial evaluation workers; does not change results

  void validate() const;
};

BcdConfig bcd_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BcdConfig& cfg);

struct TrialResult {
  RemovalSet removal;
  double delta_acc = 0.0;  // baseline accuracy - hypothesis accuracy, percent
};

struct StepOutcome {
  std::size_t chosen = 0;           // index into trials
  std::vector<TrialResult> trials;  // serially-equivalent trials, in order
  double baseline_acc = 0.0;
  bool accepted_early = false;

  const TrialResult& chosen_trial() const { return trials.at(chosen); }
};

struct BcdIteration {
  std::size_t step = 0;
  std::size_t budget_before = 0;
  std::size_t budget_after = 0;
  std::size_t trials_used = 0;
  double chosen_delta_acc = 0.0;
  bool accepted_early = false;
  double acc_before_finetune = 0.0;
  double acc_after_finetune = 0.0;
};

struct BcdRunLog {
  std::size_t b_ref = 0;
  std::vector<BcdIteration> iterations;
  std::vector<ReluMask> checkpoints;  // mask after each iteration
};

struct BcdResult {
  Parameters params;
  ReluMask mask;
  BcdRunLog log;
};

/// ceil((b_ref - b_target) / drc).
std::size_t num_steps(std::size_t b_ref, std::size_t b_target, std::size_t drc);

/// Seed of trial `trial` at iteration `step`.
std::uint64_t trial_seed(std::uint64_t seed, std::size_t step, std::size_t trial);

/// One sample-evaluate-select round on `eval`. Requires l0(mask) > b_target.
StepOutcome bcd_step(const Network& net, const Parameters& params, const ReluMask& mask, const Dataset& eval,
                     const BcdConfig& cfg, std::size_t step_index);

using BcdObserver = std::function<void(const BcdIteration&)>;

/// Runs every iteration from m_ref down to cfg.b_target.
BcdResult bcd_run(const Network& net, Parameters params, const ReluMask& m_ref, const Dataset& train,
                  const BcdConfig& cfg, const BcdObserver& observer = {});

nlohmann::json to_json(const BcdRunLog& log);
/// Columns: step,budget,acc_before_finetune,acc_after_finetune,trials_used.
std::string budget_accuracy_csv(const BcdRunLog& log);

}  // namespace relu_sculpt
