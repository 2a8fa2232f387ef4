#include "relu_sculpt/config.hpp"

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include "relu_sculpt/error.hpp"
#include <spdlog/spdlog.h>
#include "relu_sculpt/engine.hpp"
#include "relu_sculpt/rng.hpp"

namespace relu_sculpt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Non-negative integer, whether the JSON value was built signed or unsigned.
bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

void check_keys(const json& j, const std::set<std::string>& keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

// Section seeds come from the top-level seed; a local one would be ignored.
void reject_seed(const json& j, const std::string& where) {
  if (!j.is_object()) return;
  if (j.contains("seed")) throw ConfigError(where + ": 'seed' is only allowed at the top level");
  for (const char* nested : {"finetune", "train"}) {
    if (j.contains(nested)) reject_seed(j.at(nested), where + "." + nested);
  }
}

fs::path resolve(const json& v, const fs::path& base, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a path string");
  const fs::path p = v.get<std::string>();
  return p.is_absolute() ? p : base / p;
}

std::size_t count(const json& j, const std::string& key, std::size_t fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!is_count(j.at(key))) throw ConfigError(where + ": '" + key + "' must be a non-negative integer");
  return j.at(key).get<std::size_t>();
}

double real(const json& j, const std::string& key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigError(where + ": '" + key + "' must be a number");
  return j.at(key).get<double>();
}

std::array<float, 3> triple(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected 3 numbers");
  return {j[0].get<float>(), j[1].get<float>(), j[2].get<float>()};
}

}  // namespace

DatasetConfig dataset_config_from_json(const json& j, const fs::path& base) {
  const std::string where = "dataset";
  if (!j.is_object() || !j.contains("kind")) throw ConfigError(where + ": missing 'kind'");
  DatasetConfig d;
  const std::string kind = j.at("kind");
  if (kind == "spirals") {
    check_keys(j, {"kind", "classes", "per_class", "noise", "train_fraction"}, where);
    d.kind = DatasetConfig::Kind::spirals;
    d.noise = real(j, "noise", d.noise, where);
  } else if (kind == "blobs") {
    check_keys(j, {"kind", "classes", "per_class", "dims", "separation", "train_fraction"}, where);
    d.kind = DatasetConfig::Kind::blobs;
    d.dims = count(j, "dims", d.dims, where);
    d.separation = real(j, "separation", d.separation, where);
  } else if (kind == "cifar10") {
    check_keys(j, {"kind", "train", "test", "mean", "std", "train_fraction"}, where);
    d.kind = DatasetConfig::Kind::cifar10;
    if (!j.contains("train")) throw ConfigError(where + ": cifar10 needs 'train'");
    d.train_path = resolve(j.at("train"), base, where + ".train");
    if (j.contains("test")) d.test_path = resolve(j.at("test"), base, where + ".test");
    if (j.contains("mean")) d.normalization.mean = triple(j.at("mean"), where + ".mean");
    if (j.contains("std")) d.normalization.std = triple(j.at("std"), where + ".std");
  } else {
    throw ConfigError(where + ": unknown kind '" + kind + "'");
  }
  d.classes = count(j, "classes", d.classes, where);
  d.per_class = count(j, "per_class", d.per_class, where);
  d.train_fraction = real(j, "train_fraction", d.train_fraction, where);
  if (!(d.train_fraction > 0.0 && d.train_fraction <= 1.0)) throw ConfigError(where + ": train_fraction must be in (0, 1]");
  return d;
}

json to_json(const DatasetConfig& d) {
  json j;
  switch (d.kind) {
    case DatasetConfig::Kind::spirals:
      j = {{"kind", "spirals"}, {"classes", d.classes}, {"per_class", d.per_class}, {"noise", d.noise}};
      break;
    case DatasetConfig::Kind::blobs:
      j = {{"kind", "blobs"},  {"classes", d.classes},       {"per_class", d.per_class},
           {"dims", d.dims},   {"separation", d.separation}};
      break;
    case DatasetConfig::Kind::cifar10:
      j = {{"kind", "cifar10"},
           {"train", d.train_path.string()},
           {"mean", d.normalization.mean},
           {"std", d.normalization.std}};
      if (d.test_path) j["test"] = d.test_path->string();
      break;
  }
  j["train_fraction"] = d.train_fraction;
  return j;
}

namespace {

AuditConfig audit_from_json(const json& j) {
  const std::string where = "audit";
  check_keys(j, {"lambda", "beta", "budget", "seeds", "d_max", "enumeration_cap", "samples"}, where);
  AuditConfig a;
  a.lambda = real(j, "lambda", a.lambda, where);
  if (j.contains("beta")) a.beta = real(j, "beta", 0.0, where);
  if (!j.contains("budget")) throw ConfigError(where + ": missing 'budget'");
  a.budget = count(j, "budget", 0, where);
  a.seeds = count(j, "seeds", a.seeds, where);
  a.d_max = count(j, "d_max", a.d_max, where);
  a.enumeration_cap = count(j, "enumeration_cap", a.enumeration_cap, where);
  if (j.contains("samples")) a.samples = count(j, "samples", 0, where);
  if (a.lambda < 0.0) throw ConfigError(where + ": lambda must be >= 0");
  if (a.beta && *a.beta < 0.0) throw ConfigError(where + ": beta must be >= 0");
  return a;
}

json to_json(const AuditConfig& a) {
  json j{{"lambda", a.lambda},       {"budget", a.budget},
         {"seeds", a.seeds},         {"d_max", a.d_max},
         {"enumeration_cap", a.enumeration_cap}};
  if (a.beta) j["beta"] = *a.beta;
  if (a.samples) j["samples"] = *a.samples;
  return j;
}

std::uint64_t dataset_seed(std::uint64_t seed) { return rng::derive(seed, "dataset"); }
std::uint64_t init_seed(std::uint64_t seed) { return rng::derive(seed, "init"); }

}  // namespace

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  if (cfg.pretrain) cfg.pretrain->seed = rng::derive(seed, "pretrain");
  if (cfg.bcd) {
    cfg.bcd->seed = rng::derive(seed, "bcd");
    cfg.bcd->finetune.seed = rng::derive(seed, "bcd-finetune");
  }
  if (cfg.snl) cfg.snl->train.seed = rng::derive(seed, "snl");
}

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
  check_keys(doc, {"network", "input_shape", "dataset", "parameters", "pretrain", "initial_mask", "bcd", "snl", "audit",
                   "seed"},
             "config");
  RunConfig cfg;
  if (!doc.contains("network")) throw ConfigError("config: missing 'network'");
  const json& n = doc.at("network");
  if (n.is_string()) {
    cfg.network_path = resolve(n, base_dir, "network");
    cfg.network = load_network_spec(*cfg.network_path);
  } else {
    cfg.network = network_spec_from_json(n);
  }
  if (!doc.contains("dataset")) throw ConfigError("config: missing 'dataset'");
  cfg.dataset = dataset_config_from_json(doc.at("dataset"), base_dir);

  if (doc.contains("input_shape")) {
    for (const auto& d : doc.at("input_shape")) {
      if (!is_count(d) || d.get<std::size_t>() == 0) throw ConfigError("config: bad input_shape");
      cfg.input_shape.push_back(d.get<std::size_t>());
    }
  } else if (cfg.network.input_shape) {
    cfg.input_shape = *cfg.network.input_shape;
  } else {
    switch (cfg.dataset.kind) {
      case DatasetConfig::Kind::spirals: cfg.input_shape = {2}; break;
      case DatasetConfig::Kind::blobs: cfg.input_shape = {cfg.dataset.dims}; break;
      case DatasetConfig::Kind::cifar10: cfg.input_shape = {3, 32, 32}; break;
    }
  }

  if (doc.contains("parameters")) cfg.parameters = resolve(doc.at("parameters"), base_dir, "parameters");
  if (doc.contains("pretrain")) {
    reject_seed(doc.at("pretrain"), "pretrain");
    cfg.pretrain = train_config_from_json(doc.at("pretrain"));
  }
  if (doc.contains("initial_mask")) cfg.initial_mask = resolve(doc.at("initial_mask"), base_dir, "initial_mask");
  if (doc.contains("bcd")) {
    reject_seed(doc.at("bcd"), "bcd");
    cfg.bcd = bcd_config_from_json(doc.at("bcd"));
  }
  if (doc.contains("snl")) {
    reject_seed(doc.at("snl"), "snl");
    cfg.snl = snl_config_from_json(doc.at("snl"));
  }
  if (doc.contains("audit")) cfg.audit = audit_from_json(doc.at("audit"));
  std::uint64_t seed = 0;
  if (doc.contains("seed")) {
    if (!is_count(doc.at("seed"))) throw ConfigError("config: 'seed' must be a non-negative integer");
    seed = doc.at("seed").get<std::uint64_t>();
  }
  apply_seed(cfg, seed);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(doc, path.parent_path());
  } catch (const Error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json to_json(const RunConfig& cfg) {
  json j{{"network", to_json(cfg.network)}, {"input_shape", cfg.input_shape}, {"dataset", to_json(cfg.dataset)},
         {"seed", cfg.seed}};
  if (cfg.network_path) j["network_path"] = cfg.network_path->string();
  if (cfg.parameters) j["parameters"] = cfg.parameters->string();
  if (cfg.pretrain) j["pretrain"] = to_json(*cfg.pretrain);
  if (cfg.initial_mask) j["initial_mask"] = cfg.initial_mask->string();
  if (cfg.bcd) j["bcd"] = to_json(*cfg.bcd);
  if (cfg.snl) j["snl"] = to_json(*cfg.snl);
  if (cfg.audit) j["audit"] = to_json(*cfg.audit);
  return j;
}

Dataset make_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
  switch (cfg.kind) {
    case DatasetConfig::Kind::spirals: return gen_spirals(cfg.classes, cfg.per_class, cfg.noise, seed);
    case DatasetConfig::Kind::blobs: return gen_blobs(cfg.classes, cfg.per_class, cfg.dims, cfg.separation, seed);
    case DatasetConfig::Kind::cifar10: return load_cifar10_bin(cfg.train_path, cfg.normalization);
  }
  throw ConfigError("unknown dataset kind");
}

Workspace prepare_workspace(const RunConfig& cfg) {
  Network net(cfg.network, cfg.input_shape);
  const std::uint64_t dseed = dataset_seed(cfg.seed);
  Dataset all = make_dataset(cfg.dataset, dseed);
  DatasetSplit data;
  if (cfg.dataset.kind == DatasetConfig::Kind::cifar10 && cfg.dataset.test_path) {
    data.train = std::move(all);
    data.test = load_cifar10_bin(*cfg.dataset.test_path, cfg.dataset.normalization);
  } else if (cfg.dataset.train_fraction >= 1.0) {
    data.train = std::move(all);
  } else {
    data = split(all, {cfg.dataset.train_fraction, rng::derive(dseed, "split")});
  }
  if (data.train.sample_shape() != net.input_shape()) {
    throw ShapeError("dataset samples are " + to_string(data.train.sample_shape()) + " but the network expects " +
                     to_string(net.input_shape()));
  }
  if (data.train.class_count > element_count(net.output_shape())) {
    throw ShapeError("network has fewer outputs than the dataset has classes");
  }

  Parameters params = cfg.parameters ? load_parameters(*cfg.parameters, net)
                                     : Parameters::kaiming_uniform(net, init_seed(cfg.seed));
  ReluMask mask = cfg.initial_mask ? load_mask(*cfg.initial_mask) : all_ones(net);
  if (!mask.same_shape(all_ones(net))) throw ShapeError("initial mask does not match the network");
  if (cfg.pretrain && cfg.pretrain->epochs > 0) {
    spdlog::info("pretraining for {} epochs", cfg.pretrain->epochs);
    params = finetune(net, std::move(params), mask, data.train, *cfg.pretrain);
  }
  Workspace ws{std::move(net), std::move(data), std::move(params), std::move(mask), 0.0};
  if (!ws.data.test.empty()) {
    ws.pretrain_test_accuracy = evaluate_accuracy(ws.net, ws.params, ws.initial_mask, ws.data.test);
  }
  return ws;
}

}  // namespace relu_sculpt
