#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace relu_sculpt {

/// Shortest round-trip decimal with '.' separator, independent of locale.
std::string format_real(double v);

/// Writes text / JSON (2-space indent) creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

/// Square matrix as CSV with a header row of column indices.
std::string matrix_csv(const std::vector<std::vector<double>>& m);

inline constexpr const char* kEngineVersion = "0.1.0";

/// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

/// Record of one command invocation. Every artifact written under `out_dir`
/// is listed in `files` (paths relative to out_dir).
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::string status = "ok";  // ok | target_not_reached
  nlohmann::json results = nlohmann::json::object();
  std::vector<std::filesystem::path> files;
};

/// Writes manifest.json into out_dir; the inventory carries each file's size.
void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m);

}  // namespace relu_sculpt
