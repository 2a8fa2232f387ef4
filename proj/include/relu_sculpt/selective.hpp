#pragma once

// Relaxed ("selective") baseline: every site carries a continuous gate alpha
// in [0,1] trained jointly with theta on cross-entropy + lambda * sum(alpha).
// lambda grows by kappa whenever the thresholded budget stalls; training stops
// once the budget reaches the target, then the gates are hard-thresholded and
// theta is finetuned under the binary mask.

#include <cstdint>
#include <optional>
#include <vector>

#include "relu_sculpt/dataset.hpp"
#include "relu_sculpt/engine.hpp"
#include "relu_sculpt/mask.hpp"
#include "relu_sculpt/network.hpp"
#include "relu_sculpt/parameters.hpp"
#include "relu_sculpt/train.hpp"

#include <json.hpp>

namespace relu_sculpt {

struct HysteresisConfig {
  double t_h = 0.1;
};

struct SnlConfig {
  double lambda0 = 1e-3;
  double kappa = 1.5;
  double threshold = 0.5;
  std::size_t epochs = 100;  // cap on joint theta/alpha epochs
  std::size_t budget_check_interval = 5;
  std::optional<std::size_t> stall_min_decrease;  // nullopt: 1% of the current budget
  std::size_t b_target = 0;
  // Optimizer and cosine schedule for the joint phase; `train.epochs` is the
  // length of the finetune after binarization.
  TrainConfig train{};
  std::optional<double> alpha_lr;  // nullopt: train.lr_max
  std::optional<HysteresisConfig> hysteresis;

  void validate() const;
};

SnlConfig snl_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SnlConfig& cfg);

struct MaskCheckpoint {
  std::size_t epoch = 0;
  ReluMask mask;
  std::size_t budget = 0;
  double train_accuracy = 0.0;
  double lambda = 0.0;
};

struct SnlResult {
  Parameters params;
  ReluMask mask;
  std::vector<MaskCheckpoint> checkpoints;
  std::vector<double> lambda_history;  // lambda in effect after each epoch
  std::size_t epochs_run = 0;
  bool target_reached = false;
  double acc_before_binarization = 0.0;  // soft gates
  double acc_after_binarization = 0.0;   // hard mask, before finetune
  double acc_after_finetune = 0.0;
};

/// Number of sites with alpha > threshold.
std::size_t effective_budget(const SoftMask& alpha, double threshold);
/// Binary mask alpha > threshold, shaped like `shape`.
ReluMask binarize(const SoftMask& alpha, double threshold, const ReluMask& shape);

/// Cross-entropy of the soft-gated network plus lambda * sum|alpha|.
template <typename T>
T snl_loss(const Network& net, const BasicParameters<T>& params, const BasicSoftMask<T>& alpha, std::span<const T> x,
           std::size_t label, T lambda);

/// Hysteresis indicator update: a live site stays live while m_w > -t_h; a
/// dead site revives only when m_w > t_h.
bool hysteresis_update(bool current, double m_w, double t_h);

SnlResult snl_run(const Network& net, Parameters params, const Dataset& train, const SnlConfig& cfg);

/// Entry (i, j) = iou(smaller-budget mask, larger-budget mask) of checkpoints i, j.
std::vector<std::vector<double>> iou_matrix(const std::vector<MaskCheckpoint>& checkpoints);
/// iou of each consecutive checkpoint pair, smaller budget as the reference.
std::vector<double> consecutive_iou(const std::vector<MaskCheckpoint>& checkpoints);

}  // namespace relu_sculpt
