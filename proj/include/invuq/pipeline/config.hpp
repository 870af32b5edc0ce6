#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "invuq/error.hpp"
#include "invuq/gaap/engine.hpp"
#include "invuq/measures.hpp"
#include "invuq/providers/http.hpp"
#include "invuq/providers/provider.hpp"

namespace invuq::pipeline {

using json = nlohmann::json;

enum class PerturbMode { Gaap, Paraphrase, File };

inline PerturbMode parse_perturb_mode(const std::string& s) {
  if (s == "gaap") return PerturbMode::Gaap;
  if (s == "paraphrase") return PerturbMode::Paraphrase;
  if (s == "file") return PerturbMode::File;
  throw Error(ErrorKind::Config, "perturb mode must be gaap, paraphrase or file, got '" + s + "'");
}

inline std::string to_string(PerturbMode m) {
  switch (m) {
    case PerturbMode::Gaap: return "gaap";
    case PerturbMode::Paraphrase: return "paraphrase";
    case PerturbMode::File: return "file";
  }
  return "unknown";
}

struct GenerationConfig {
  std::string stub;  // "", canned, roulette, echo
  providers::Endpoint endpoint{"https://api.openai.com/v1", "OPENAI_API_KEY", "gpt-3.5-turbo", 60.0};
  int retries = 3;
  double retry_base_delay = 0.5;
  double requests_per_second = 0.0;
  std::vector<std::string> roulette_distractors{"Atlantis", "Seventeen"};
};

struct EmbeddingConfig {
  std::string stub;  // "", hash-bucket, bag-of-words
  bool stub_explicit = false;  // set in the config file, so --stub leaves it alone
  long dimension = 65536;
  providers::Endpoint endpoint{"https://api.openai.com/v1", "OPENAI_API_KEY", "text-embedding-3-small", 60.0};
  std::size_t batch_size = 64;
};

struct RunConfig {
  int n = 9;
  int r = 5;
  int bootstraps = 30;
  std::uint64_t seed = 0;
  std::vector<double> temperatures{1.0};
  std::vector<double> tsu_temperatures{0.3, 0.7, 1.0, 1.4};
  std::vector<Measure> measures{Measure::InvEntropy, Measure::NrInvEntropy, Measure::NiEntropy, Measure::WdPxPy,
                                Measure::MaxPyX};
  std::size_t max_items = 50;
  std::size_t concurrency = 4;
  int abort_after_provider_failures = 3;

  PerturbMode perturb_mode = PerturbMode::Gaap;
  std::string perturb_file;
  double paraphrase_temperature = 0.7;
  gaap::GaapConfig gaap;
  std::string lexicon;

  GenerationConfig generation;
  EmbeddingConfig embedding;
  std::string judge_mode = "exact";
  std::string judge_model;  // empty: the generation model

  providers::PromptTemplates prompts;
  std::string cache_dir;  // empty: <stage-dir>/cache

  std::size_t eval_resamples = 40;
  bool brier_holdout = false;

  bool offline() const { return !generation.stub.empty(); }

  void validate() const {
    if (n < 1 || r < 1 || bootstraps < 1) throw Error(ErrorKind::Config, "n, r and B must all be >= 1");
    if (temperatures.empty()) throw Error(ErrorKind::Config, "no temperatures configured");
    for (double t : temperatures) {
      if (!std::isfinite(t) || t < 0.0) throw Error(ErrorKind::Config, "temperatures must be finite and >= 0");
    }
    if (measures.empty()) throw Error(ErrorKind::Config, "no measures selected");
    if (concurrency < 1) throw Error(ErrorKind::Config, "concurrency must be >= 1");
    if (eval_resamples < 1) throw Error(ErrorKind::Config, "evaluation resamples must be >= 1");
    if (!generation.stub.empty() && generation.stub != "canned" && generation.stub != "roulette" &&
        generation.stub != "echo") {
      throw Error(ErrorKind::Config, "unknown generation stub '" + generation.stub + "'");
    }
    if (!embedding.stub.empty() && embedding.stub != "hash-bucket" && embedding.stub != "bag-of-words") {
      throw Error(ErrorKind::Config, "unknown embedding stub '" + embedding.stub + "'");
    }
    if (perturb_mode == PerturbMode::File && perturb_file.empty())
      throw Error(ErrorKind::Config, "perturb mode 'file' needs perturb.file");
    gaap::GaapConfig g = gaap;
    g.target_count = n;
    g.validate();
  }
};

namespace detail {

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = j[key].get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config key '") + key + "': " + e.what());
  }
}

inline void read_endpoint(const json& j, providers::Endpoint& ep) {
  read(j, "base_url", ep.base_url);
  read(j, "api_key_env", ep.api_key_env);
  read(j, "model", ep.model);
  read(j, "timeout_seconds", ep.timeout_seconds);
}

inline const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) throw Error(ErrorKind::Config, std::string("config key '") + key + "' must be an object");
  return j[key];
}

}  // namespace detail

/// Reads the documented key set; anything absent keeps its default.
inline RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  using detail::read;
  RunConfig c;
  read(j, "n", c.n);
  read(j, "r", c.r);
  read(j, "B", c.bootstraps);
  read(j, "seed", c.seed);
  read(j, "temperatures", c.temperatures);
  read(j, "tsu_temperatures", c.tsu_temperatures);
  if (j.contains("measures")) {
    std::vector<std::string> names;
    read(j, "measures", names);
    c.measures.clear();
    for (const auto& m : names) c.measures.push_back(parse_measure(m));
  }
  read(j, "max_items", c.max_items);
  read(j, "concurrency", c.concurrency);
  read(j, "abort_after_provider_failures", c.abort_after_provider_failures);
  read(j, "cache_dir", c.cache_dir);

  const json& p = detail::section(j, "perturb");
  if (p.contains("mode")) c.perturb_mode = parse_perturb_mode(p["mode"].get<std::string>());
  read(p, "file", c.perturb_file);
  read(p, "paraphrase_temperature", c.paraphrase_temperature);

  const json& g = detail::section(j, "gaap");
  read(g, "keyword_ratio", c.gaap.keyword_ratio);
  read(g, "max_generations", c.gaap.max_generations);
  read(g, "similarity_floor", c.gaap.similarity_floor);
  read(g, "sample_interval", c.gaap.sample_interval);
  read(g, "selection_count", c.gaap.selection_count);
  read(g, "offspring_count", c.gaap.offspring_count);
  read(g, "mutation_count", c.gaap.mutation_count);
  read(g, "lexicon", c.lexicon);

  const json& gen = detail::section(j, "generation");
  read(gen, "stub", c.generation.stub);
  detail::read_endpoint(gen, c.generation.endpoint);
  read(gen, "retries", c.generation.retries);
  read(gen, "retry_base_delay", c.generation.retry_base_delay);
  read(gen, "requests_per_second", c.generation.requests_per_second);
  read(gen, "roulette_distractors", c.generation.roulette_distractors);

  const json& emb = detail::section(j, "embedding");
  read(emb, "stub", c.embedding.stub);
  c.embedding.stub_explicit = emb.contains("stub");
  read(emb, "dimension", c.embedding.dimension);
  read(emb, "batch_size", c.embedding.batch_size);
  detail::read_endpoint(emb, c.embedding.endpoint);

  const json& judge = detail::section(j, "judge");
  read(judge, "mode", c.judge_mode);
  read(judge, "model", c.judge_model);

  const json& prompts = detail::section(j, "prompts");
  read(prompts, "qa", c.prompts.qa);
  read(prompts, "multiple-choice", c.prompts.multiple_choice);
  read(prompts, "math", c.prompts.math);
  read(prompts, "paraphrase", c.prompts.paraphrase);
  read(prompts, "judge", c.prompts.judge);

  const json& ev = detail::section(j, "evaluation");
  read(ev, "resamples", c.eval_resamples);
  read(ev, "brier_holdout", c.brier_holdout);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, path + ": " + e.what());
  }
  RunConfig c = config_from_json(j);
  // Relative file references are taken from the config's own directory.
  const auto base = std::filesystem::path(path).parent_path();
  for (std::string* p : {&c.lexicon, &c.perturb_file, &c.cache_dir}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

}  // namespace invuq::pipeline
