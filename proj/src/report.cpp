#include "relu_sculpt/report.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "relu_sculpt/error.hpp"

namespace relu_sculpt {

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(path.string() + ": cannot open for writing");
  out << text;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string matrix_csv(const std::vector<std::vector<double>>& m) {
  std::string out = "row";
  for (std::size_t j = 0; j < m.size(); ++j) out += "," + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += std::to_string(i);
    for (double v : m[i]) out += "," + format_real(v);
    out += "\n";
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const std::filesystem::path& out_dir, const RunManifest& m) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : m.files) {
    const auto full = out_dir / f;
    if (!std::filesystem::exists(full)) throw Error("manifest: listed artifact " + full.string() + " is missing");
    files.push_back({{"path", f.generic_string()}, {"bytes", std::filesystem::file_size(full)}});
  }
  write_json(out_dir / "manifest.json", {{"command", m.command},
                                         {"engine_version", kEngineVersion},
                                         {"seed", m.seed},
                                         {"started", m.started},
                                         {"finished", m.finished},
                                         {"status", m.status},
                                         {"config", m.config},
                                         {"results", m.results},
                                         {"files", files}});
}

}  // namespace relu_sculpt
