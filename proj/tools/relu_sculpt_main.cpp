// relu_sculpt: command-line front end.
//
// Exit codes: 0 success, 1 hard failure, 2 target budget not reached.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "relu_sculpt/bcd.hpp"
#include "relu_sculpt/config.hpp"
#include "relu_sculpt/error.hpp"
#include "relu_sculpt/log.hpp"
#include "relu_sculpt/oracle.hpp"
#include "relu_sculpt/report.hpp"
#include "relu_sculpt/rng.hpp"
#include "relu_sculpt/selective.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace relu_sculpt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitTargetNotReached = 2;

struct CommonOptions {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "override the configuration's top-level seed");
  cmd->add_option("--threads", o.threads, "evaluation worker threads")->check(CLI::PositiveNumber);
}

RunConfig load(const CommonOptions& o) {
  RunConfig cfg = load_run_config(o.config);
  if (o.seed) apply_seed(cfg, *o.seed);
  return cfg;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::string part;
  std::stringstream in(text);
  while (std::getline(in, part, text.find('x') != std::string::npos ? 'x' : ',')) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(part, &used);
      if (used != part.size() || v == 0) throw std::invalid_argument(part);
      s.push_back(v);
    } catch (const std::logic_error&) {
      throw ConfigError("bad input shape '" + text + "' (expected e.g. 3,32,32)");
    }
  }
  if (s.empty()) throw ConfigError("empty input shape");
  return s;
}

std::string with_commas(std::size_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string numbered(const std::string& prefix, std::size_t i, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu", i);
  return prefix + buf + ext;
}

// ---------------------------------------------------------------------------

int cmd_count_relus(const std::string& network_path, const std::string& shape_text, const std::string& out) {
  const NetworkSpec spec = load_network_spec(network_path);
  Shape shape;
  if (!shape_text.empty()) {
    shape = parse_shape(shape_text);
  } else if (spec.input_shape) {
    shape = *spec.input_shape;
  } else {
    throw ConfigError("network has no input_shape; pass --input-shape");
  }
  const Network net(spec, shape);
  const ReluMask ones = all_ones(net);
  const auto counts = per_layer_counts(ones);

  std::printf("input %s\n", to_string(shape).c_str());
  std::printf("%-6s %-18s %10s\n", "layer", "shape", "relus");
  json layers = json::array();
  for (const auto& [layer, n] : counts) {
    std::printf("%-6zu %-18s %10s\n", layer, to_string(net.layer_output_shape(layer)).c_str(), with_commas(n).c_str());
    layers.push_back({{"layer", layer}, {"shape", net.layer_output_shape(layer)}, {"relus", n}});
  }
  std::printf("total  %s\n", with_commas(ones.l0()).c_str());
  std::printf(
      "note: counts are the elements of every maskable activation. The often quoted overall figure for ResNet18 on "
      "32x32 inputs (570K) differs from the per-stage pattern 65536x5 + 32768x4 + 16384x4 + 8192x4 = 557,056 counted "
      "here.\n");
  if (!out.empty()) {
    write_json(fs::path(out) / "relu_counts.json",
               {{"network", network_path}, {"input_shape", shape}, {"layers", layers}, {"total", ones.l0()}});
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

json accuracy_results(const std::string& method, const Workspace& ws, const Parameters& params, const ReluMask& mask,
                      std::size_t threads) {
  json r{{"method", method},
         {"budget", mask.l0()},
         {"b_ref", ws.initial_mask.l0()},
         {"train_accuracy", evaluate_accuracy(ws.net, params, mask, ws.data.train, threads)}};
  if (!ws.data.test.empty()) {
    r["test_accuracy"] = evaluate_accuracy(ws.net, params, mask, ws.data.test, threads);
    r["initial_test_accuracy"] = ws.pretrain_test_accuracy;
  }
  return r;
}

int cmd_run_bcd(const CommonOptions& o) {
  RunManifest manifest{"run-bcd"};
  manifest.started = utc_timestamp();
  RunConfig cfg = load(o);
  if (!cfg.bcd) throw ConfigError("config has no 'bcd' section");
  cfg.bcd->threads = o.threads;
  manifest.seed = cfg.seed;
  manifest.config = to_json(cfg);

  const Workspace ws = prepare_workspace(cfg);
  if (cfg.bcd->b_target > ws.initial_mask.l0()) {
    throw PreconditionError("b_target " + std::to_string(cfg.bcd->b_target) + " exceeds the current budget " +
                            std::to_string(ws.initial_mask.l0()));
  }
  spdlog::info("bcd: {} -> {} ReLUs in {} steps", ws.initial_mask.l0(), cfg.bcd->b_target,
               num_steps(ws.initial_mask.l0(), cfg.bcd->b_target, cfg.bcd->drc));
  const BcdResult result = bcd_run(ws.net, ws.params, ws.initial_mask, ws.data.train, *cfg.bcd, [](const BcdIteration& it) {
    spdlog::info("step {}: {} -> {} ReLUs, {} trials, acc {:.2f}% -> {:.2f}%", it.step, it.budget_before,
                 it.budget_after, it.trials_used, it.acc_before_finetune, it.acc_after_finetune);
  });

  const fs::path out = o.out;
  fs::create_directories(out / "checkpoints");
  save_mask(out / "mask_final.rmsk", result.mask);
  save_parameters(out / "params_final.rsw", result.params);
  write_json(out / "bcd_log.json", to_json(result.log));
  write_text(out / "budget_accuracy.csv", budget_accuracy_csv(result.log));
  manifest.files = {"mask_final.rmsk", "params_final.rsw", "bcd_log.json", "budget_accuracy.csv"};
  save_mask(out / "checkpoints" / numbered("step_", 0, ".rmsk"), ws.initial_mask);
  manifest.files.push_back(fs::path("checkpoints") / numbered("step_", 0, ".rmsk"));
  for (std::size_t i = 0; i < result.log.checkpoints.size(); ++i) {
    const fs::path rel = fs::path("checkpoints") / numbered("step_", i + 1, ".rmsk");
    save_mask(out / rel, result.log.checkpoints[i]);
    manifest.files.push_back(rel);
  }
  manifest.results = accuracy_results("bcd", ws, result.params, result.mask, o.threads);
  manifest.results["steps"] = result.log.iterations.size();
  manifest.finished = utc_timestamp();
  write_manifest(out, manifest);
  return kExitOk;
}

int cmd_run_snl(const CommonOptions& o) {
  RunManifest manifest{"run-snl"};
  manifest.started = utc_timestamp();
  RunConfig cfg = load(o);
  if (!cfg.snl) throw ConfigError("config has no 'snl' section");
  if (cfg.initial_mask) throw ConfigError("run-snl starts from the all-ones mask; remove 'initial_mask'");
  manifest.seed = cfg.seed;
  manifest.config = to_json(cfg);

  const Workspace ws = prepare_workspace(cfg);
  const SnlResult result = snl_run(ws.net, ws.params, ws.data.train, *cfg.snl);

  const fs::path out = o.out;
  fs::create_directories(out / "checkpoints");
  save_mask(out / "mask_final.rmsk", result.mask);
  save_parameters(out / "params_final.rsw", result.params);
  json checkpoints = json::array();
  manifest.files = {"mask_final.rmsk", "params_final.rsw", "snl_log.json"};
  for (const auto& c : result.checkpoints) {
    const fs::path rel = fs::path("checkpoints") / numbered("epoch_", c.epoch, ".rmsk");
    save_mask(out / rel, c.mask);
    manifest.files.push_back(rel);
    checkpoints.push_back(
        {{"epoch", c.epoch}, {"budget", c.budget}, {"train_accuracy", c.train_accuracy}, {"lambda", c.lambda}});
  }
  write_json(out / "snl_log.json", {{"epochs_run", result.epochs_run},
                                    {"target_reached", result.target_reached},
                                    {"lambda_history", result.lambda_history},
                                    {"checkpoints", checkpoints},
                                    {"acc_before_binarization", result.acc_before_binarization},
                                    {"acc_after_binarization", result.acc_after_binarization},
                                    {"acc_after_finetune", result.acc_after_finetune}});

  manifest.results = accuracy_results("snl", ws, result.params, result.mask, o.threads);
  manifest.results["target_reached"] = result.target_reached;
  manifest.results["epochs_run"] = result.epochs_run;
  manifest.results["acc_before_binarization"] = result.acc_before_binarization;
  manifest.results["acc_after_binarization"] = result.acc_after_binarization;
  manifest.results["acc_after_finetune"] = result.acc_after_finetune;
  if (!result.target_reached) {
    manifest.status = "target_not_reached";
    spdlog::warn("snl stopped at {} ReLUs after {} epochs; target was {}", result.mask.l0(), result.epochs_run,
                 cfg.snl->b_target);
  }
  manifest.finished = utc_timestamp();
  write_manifest(out, manifest);
  return result.target_reached ? kExitOk : kExitTargetNotReached;
}

// ---------------------------------------------------------------------------

int cmd_analyze_iou(const std::string& dir, const std::string& out_arg) {
  if (!fs::is_directory(dir)) throw PreconditionError("checkpoint directory " + dir + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".rmsk") files.push_back(e.path());
  }
  if (files.empty()) throw PreconditionError("no .rmsk checkpoints in " + dir);
  std::sort(files.begin(), files.end());
  std::vector<MaskCheckpoint> checkpoints;
  for (std::size_t i = 0; i < files.size(); ++i) {
    ReluMask m;
    try {
      m = load_mask(files[i]);
    } catch (const Error& e) {
      throw FormatError(files[i].string() + ": " + e.what());
    }
    if (!checkpoints.empty() && !m.same_shape(checkpoints.front().mask)) {
      throw ShapeError(files[i].string() + ": mask shape differs from " + files.front().string());
    }
    checkpoints.push_back({i, std::move(m), 0, 0.0, 0.0});
    checkpoints.back().budget = checkpoints.back().mask.l0();
  }
  const auto matrix = iou_matrix(checkpoints);
  const auto series = consecutive_iou(checkpoints);

  const fs::path out = out_arg.empty() ? fs::path(dir) : fs::path(out_arg);
  write_text(out / "iou_matrix.csv", matrix_csv(matrix));
  std::string csv = "pair,from,to,budget_from,budget_to,iou\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    csv += std::to_string(i) + "," + files[i].filename().string() + "," + files[i + 1].filename().string() + "," +
           std::to_string(checkpoints[i].budget) + "," + std::to_string(checkpoints[i + 1].budget) + "," +
           format_real(series[i]) + "\n";
  }
  write_text(out / "consecutive_iou.csv", csv);
  std::printf("%zu checkpoints; consecutive iou min %s\n", files.size(),
              series.empty() ? "n/a" : format_real(*std::min_element(series.begin(), series.end())).c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_audit_bounds(const CommonOptions& o) {
  RunManifest manifest{"audit-bounds"};
  manifest.started = utc_timestamp();
  RunConfig cfg = load(o);
  if (!cfg.audit) throw ConfigError("config has no 'audit' section");
  BcdConfig bcd = cfg.bcd.value_or(BcdConfig{});
  if (!cfg.bcd) bcd.seed = rng::derive(cfg.seed, "bcd");
  bcd.threads = o.threads;
  manifest.seed = cfg.seed;
  manifest.config = to_json(cfg);

  Workspace ws = prepare_workspace(cfg);
  const AuditConfig& a = *cfg.audit;
  Dataset data = a.samples ? subset(ws.data.train, *a.samples, rng::derive(cfg.seed, "audit-subset")) : ws.data.train;
  TinyProblem problem{ws.net, ws.params, std::move(data), a.lambda, a.beta, a.d_max, a.enumeration_cap};
  // Everything is computed before anything is written, so a cap violation
  // leaves no partial report behind.
  const OracleReport report = audit_run(problem, a.budget, bcd, a.seeds);

  const fs::path out = o.out;
  write_json(out / "audit_report.json", to_json(report));
  write_text(out / "audit.csv", audit_csv(report));
  manifest.files = {"audit_report.json", "audit.csv"};
  manifest.results = {{"d", report.d},
                      {"p_star", report.p_star},
                      {"eq3_rhs", report.eq3_rhs},
                      {"eq6_rhs", report.eq6_rhs},
                      {"mean_gap", report.mean_gap},
                      {"eq6_satisfaction", report.eq6_satisfaction},
                      {"oracle_sound", report.oracle_sound},
                      {"all_gaps_non_negative", report.all_gaps_non_negative}};
  manifest.finished = utc_timestamp();
  write_manifest(out, manifest);
  std::printf("d=%zu T=%zu p*=%s mean gap=%s eq3 rhs=%s eq6 rhs=%s eq6 satisfied %s of seeds\n", report.d,
              report.steps, format_real(report.p_star).c_str(), format_real(report.mean_gap).c_str(),
              format_real(report.eq3_rhs).c_str(), format_real(report.eq6_rhs).c_str(),
              format_real(report.eq6_satisfaction).c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_compare(const std::vector<std::string>& runs, const std::string& out) {
  struct Row {
    std::size_t budget;
    std::string method;
    double accuracy;
    std::uint64_t seed;
  };
  std::vector<Row> rows;
  for (const auto& run : runs) {
    const fs::path manifest_path = fs::path(run) / "manifest.json";
    if (!fs::exists(manifest_path)) throw PreconditionError("missing run artifact " + manifest_path.string());
    const json m = read_json(manifest_path);
    const json& r = m.at("results");
    const char* key = r.contains("test_accuracy") ? "test_accuracy" : "train_accuracy";
    rows.push_back({r.at("budget").get<std::size_t>(), r.at("method").get<std::string>(), r.at(key).get<double>(),
                    m.at("seed").get<std::uint64_t>()});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.budget, a.method, a.seed) < std::tie(b.budget, b.method, b.seed);
  });
  std::string csv = "budget,method,accuracy,seed\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.budget) + "," + r.method + "," + format_real(r.accuracy) + "," + std::to_string(r.seed) + "\n";
  }
  if (out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    write_text(fs::path(out) / "compare.csv", csv);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& config, const std::string& kind, const DatasetConfig& flags, std::uint64_t seed,
                 const std::string& out_arg) {
  DatasetConfig d = flags;
  if (!config.empty()) {
    d = dataset_config_from_json(read_json(config), fs::path(config).parent_path());
  } else if (kind == "blobs") {
    d.kind = DatasetConfig::Kind::blobs;
  } else if (kind != "spirals") {
    throw ConfigError("gen-data: unknown kind '" + kind + "'");
  }
  if (d.kind == DatasetConfig::Kind::cifar10) throw ConfigError("gen-data only generates spirals or blobs");
  const Dataset ds = make_dataset(d, seed);
  const fs::path out = out_arg;
  std::string csv = "label";
  for (std::size_t k = 0; k < ds.sample_size(); ++k) csv += ",x" + std::to_string(k);
  csv += "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    csv += std::to_string(ds.labels[i]);
    for (float v : ds.sample(i)) csv += "," + format_real(v);
    csv += "\n";
  }
  write_text(out / "data.csv", csv);
  if (ds.sample_shape() == Shape{3, 32, 32}) write_cifar10_records(out / "data.bin", dataset_to_cifar10(ds));
  std::printf("%zu samples, %zu classes -> %s\n", ds.size(), ds.class_count, (out / "data.csv").string().c_str());
  return kExitOk;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const IntegrityError*>(&e)) return "integrity_error";
  if (dynamic_cast<const FormatError*>(&e)) return "format_error";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape_error";
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const EnumerationCapError*>(&e)) return "enumeration_cap_exceeded";
  if (dynamic_cast<const PreconditionError*>(&e)) return "precondition_error";
  return "error";
}

}  // namespace

int main(int argc, char** argv) {
  init_logging_from_env();
  CLI::App app{"ReLU mask reduction by block coordinate descent"};
  app.require_subcommand(1);

  std::string network, input_shape, count_out;
  auto* count = app.add_subcommand("count-relus", "per-layer ReLU counts of a network spec");
  count->add_option("--network", network, "network spec (JSON)")->required()->check(CLI::ExistingFile);
  count->add_option("--input-shape", input_shape, "input shape, e.g. 3,32,32");
  count->add_option("--out", count_out, "also write relu_counts.json here");

  CommonOptions bcd_opts, snl_opts, audit_opts;
  add_common(app.add_subcommand("run-bcd", "reduce a ReLU budget by block coordinate descent"), bcd_opts);
  add_common(app.add_subcommand("run-snl", "selective (relaxed mask) baseline"), snl_opts);
  add_common(app.add_subcommand("audit-bounds", "compare BCD end points with an exhaustive optimum"), audit_opts);

  std::string iou_dir, iou_out;
  auto* iou = app.add_subcommand("analyze-iou", "IoU matrix of mask checkpoints");
  iou->add_option("checkpoint_dir", iou_dir, "directory of .rmsk files")->required();
  iou->add_option("--out", iou_out, "output directory (default: the checkpoint directory)");

  std::vector<std::string> compare_runs;
  std::string compare_out;
  auto* compare = app.add_subcommand("compare", "merge run results into one budget/method/accuracy table");
  compare->add_option("runs", compare_runs, "run output directories")->required();
  compare->add_option("--out", compare_out, "write compare.csv here instead of stdout");

  std::string gen_config, gen_kind = "spirals", gen_out = "data";
  std::uint64_t gen_seed = 0;
  DatasetConfig gen_flags;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV (and CIFAR binary when 3x32x32)");
  gen->add_option("--config", gen_config, "dataset section (JSON)")->check(CLI::ExistingFile);
  gen->add_option("--kind", gen_kind, "spirals | blobs");
  gen->add_option("--classes", gen_flags.classes);
  gen->add_option("--per-class", gen_flags.per_class);
  gen->add_option("--noise", gen_flags.noise);
  gen->add_option("--dims", gen_flags.dims);
  gen->add_option("--separation", gen_flags.separation);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (count->parsed()) return cmd_count_relus(network, input_shape, count_out);
    if (app.got_subcommand("run-bcd")) return cmd_run_bcd(bcd_opts);
    if (app.got_subcommand("run-snl")) return cmd_run_snl(snl_opts);
    if (app.got_subcommand("audit-bounds")) return cmd_audit_bounds(audit_opts);
    if (iou->parsed()) return cmd_analyze_iou(iou_dir, iou_out);
    if (compare->parsed()) return cmd_compare(compare_runs, compare_out);
    if (gen->parsed()) return cmd_gen_data(gen_config, gen_kind, gen_flags, gen_seed, gen_out);
  } catch (const std::exception& e) {
    std::cerr << json{{"status", "error"}, {"kind", error_kind(e)}, {"message", e.what()}}.dump() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
