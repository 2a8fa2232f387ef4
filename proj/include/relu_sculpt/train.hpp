#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "relu_sculpt/dataset.hpp"
#include "relu_sculpt/engine.hpp"
#include "relu_sculpt/mask.hpp"
#include "relu_sculpt/network.hpp"
#include "relu_sculpt/parameters.hpp"

#include <json.hpp>

namespace relu_sculpt {

struct SgdConfig {
  double momentum = 0.9;
  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
  std::variant<SgdConfig, AdamConfig> optimizer = SgdConfig{};
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless lr_max >= lr_min >= 0 and batch_size >= 1.
  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::size_t step, std::size_t total, double lr_max, double lr_min);

/// First-order optimizer over a fixed list of parameter spans.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<std::span<float>> params);

  /// Applies one update with learning rate `lr`; `grads` parallels the params.
  void step(const std::vector<std::span<float>>& grads, double lr);

 private:
  std::variant<SgdConfig, AdamConfig> kind_;
  std::vector<std::span<float>> params_;
  std::vector<std::vector<float>> first_;   // momentum / Adam m
  std::vector<std::vector<float>> second_;  // Adam v
  std::size_t steps_ = 0;
};

/// Sample visiting order for one epoch; a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

/// Minibatch training of theta under a fixed mask with cosine annealing over
/// the whole cfg.epochs horizon. Single-threaded and bitwise reproducible.
Parameters finetune(const Network& net, Parameters params, const ReluMask& mask, const Dataset& ds,
                    const TrainConfig& cfg);

}  // namespace relu_sculpt
