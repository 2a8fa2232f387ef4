#pragma once

// Run configuration shared by the command-line tools: which network, which
// data, where theta comes from, and the per-command sections. Documents are
// strict JSON; unknown keys are errors. Every seed is derived from the single
// top-level `seed`, so sections must not carry their own.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "relu_sculpt/bcd.hpp"
#include "relu_sculpt/dataset.hpp"
#include "relu_sculpt/mask.hpp"
#include "relu_sculpt/network.hpp"
#include "relu_sculpt/parameters.hpp"
#include "relu_sculpt/selective.hpp"
#include "relu_sculpt/train.hpp"

#include <json.hpp>

namespace relu_sculpt {

struct DatasetConfig {
  enum class Kind { spirals, blobs, cifar10 };
  Kind kind = Kind::spirals;
  // spirals / blobs
  std::size_t classes = 3;
  std::size_t per_class = 500;
  double noise = 0.05;        // spirals
  std::size_t dims = 2;       // blobs
  double separation = 10.0;   // blobs
  // cifar10
  std::filesystem::path train_path;
  std::optional<std::filesystem::path> test_path;  // nullopt: split train_path
  Normalization normalization;
  double train_fraction = 0.8;
};

DatasetConfig dataset_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const DatasetConfig& cfg);

struct AuditConfig {
  double lambda = 0.0;
  std::optional<double> beta;  // nullopt: estimated
  std::size_t budget = 0;
  std::size_t seeds = 20;
  std::size_t d_max = 16;
  std::uint64_t enumeration_cap = std::uint64_t{1} << 16;
  /// Samples used for the audit; nullopt: the whole training split.
  std::optional<std::size_t> samples;
};

struct RunConfig {
  NetworkSpec network;
  std::optional<std::filesystem::path> network_path;
  Shape input_shape;  // resolved: explicit, from the network spec, or from the data
  DatasetConfig dataset;
  std::optional<std::filesystem::path> parameters;  // RSW1 file
  std::optional<TrainConfig> pretrain;              // applied after init / load
  std::optional<std::filesystem::path> initial_mask;
  std::optional<BcdConfig> bcd;
  std::optional<SnlConfig> snl;
  std::optional<AuditConfig> audit;
  std::uint64_t seed = 0;
};

/// Relative paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved configuration, seeds included.
nlohmann::json to_json(const RunConfig& cfg);

/// Re-derives every section seed from `seed`.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

/// Network, data and starting point of a run.
struct Workspace {
  Network net;
  DatasetSplit data;
  Parameters params;
  ReluMask initial_mask;
  double pretrain_test_accuracy = 0.0;
};

Dataset make_dataset(const DatasetConfig& cfg, std::uint64_t seed);
Workspace prepare_workspace(const RunConfig& cfg);

}  // namespace relu_sculpt
