#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "invuq/error.hpp"
#include "invuq/eval/metrics.hpp"

namespace invuq::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string temperature_tag(double t) { return "t" + eval::format_temperature(t); }

inline fs::path perturbations_path(const fs::path& dir) { return dir / "perturbations.jsonl"; }
inline fs::path responses_path(const fs::path& dir, double t) { return dir / ("responses_" + temperature_tag(t) + ".jsonl"); }
inline fs::path scores_path(const fs::path& dir, double t) { return dir / ("scores_" + temperature_tag(t) + ".jsonl"); }
inline fs::path embeddings_path(const fs::path& dir, double t) {
  return dir / ("embeddings_" + temperature_tag(t) + ".jsonl");
}

/// Writes through a temporary file and renames, so an interrupted stage never
/// leaves a truncated artifact behind.
inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw Error(ErrorKind::Internal, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_text(path, text);
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// `stage` names the subcommand that produces the file, for the error text.
inline std::vector<json> read_jsonl(const fs::path& path, const std::string& stage) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::MissingArtifact, path.string() + " not found; run `" + stage + "` first");
  }
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidInput, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingArtifact, path.string() + " not found");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline json read_json(const fs::path& path, const std::string& stage) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingArtifact, path.string() + " not found; run `" + stage + "` first");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
}

}  // namespace invuq::pipeline
