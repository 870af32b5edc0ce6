#pragma once

#include <algorithm>
#include <cctype>
#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "invuq/error.hpp"
#include "invuq/eval/metrics.hpp"
#include "invuq/gaap/engine.hpp"
#include "invuq/measures.hpp"
#include "invuq/pipeline/artifacts.hpp"
#include "invuq/pipeline/config.hpp"
#include "invuq/pipeline/dataset.hpp"
#include "invuq/providers/cache.hpp"
#include "invuq/providers/http.hpp"
#include "invuq/providers/judge.hpp"
#include "invuq/providers/stubs.hpp"
#include "invuq/rng.hpp"
#include "invuq/util/parallel.hpp"

namespace invuq::pipeline {

// Stands in for a response that cleaned to nothing, so it can be embedded.
inline const std::string kEmptyResponse = "[no answer]";

/// Everything that talks to a model, built once per run.
struct Providers {
  std::unique_ptr<providers::ResponseCache> cache;
  std::unique_ptr<util::RateLimiter> limiter;
  std::unique_ptr<providers::Generator> generator;
  std::unique_ptr<providers::CachingGenerator> caching;
  std::unique_ptr<providers::Embedder> embedder;
  providers::RetryPolicy retry;
  bool persist_embeddings = false;
  std::size_t embed_batch = 64;
  std::size_t request_width = 1;

  /// A fresh in-memory embedding memo for one item over the shared upstream.
  std::unique_ptr<providers::CachingEmbedder> item_embedder() const {
    return std::make_unique<providers::CachingEmbedder>(*embedder, persist_embeddings ? cache.get() : nullptr,
                                                        embed_batch, retry);
  }
};

/// Stub generators answer from the dataset: canned gives each item's
/// reference; roulette picks among the reference and the distractors.
inline Providers make_providers(const RunConfig& c, const std::vector<DatasetItem>& items, const fs::path& cache_dir,
                                const providers::RequestObserver& observer = {}) {
  Providers p;
  p.cache = std::make_unique<providers::ResponseCache>(cache_dir);
  p.limiter = std::make_unique<util::RateLimiter>(c.generation.requests_per_second);
  p.retry.retries = c.generation.retries;
  p.retry.base_delay = c.generation.retry_base_delay;

  const std::string& stub = c.generation.stub;
  if (stub == "canned") {
    std::map<std::string, std::string> answers;
    for (const auto& it : items) answers[it.id] = it.reference;
    p.generator = std::make_unique<providers::CannedMapGenerator>(std::move(answers));
  } else if (stub == "roulette") {
    std::map<std::string, std::vector<std::string>> per_item;
    for (const auto& it : items) {
      std::vector<std::string> answers{it.reference};
      for (const auto& d : c.generation.roulette_distractors) {
        if (std::find(answers.begin(), answers.end(), d) == answers.end()) answers.push_back(d);
      }
      per_item[it.id] = std::move(answers);
    }
    p.generator = std::make_unique<providers::RouletteGenerator>(c.generation.roulette_distractors, c.seed,
                                                                 std::move(per_item));
  } else if (stub == "echo") {
    p.generator = std::make_unique<providers::EchoGenerator>();
  } else {
    auto live = std::make_unique<providers::OpenAIChatGenerator>(c.generation.endpoint);
    if (observer) live->observe(observer);
    p.generator = std::move(live);
    p.request_width = c.concurrency;
  }
  p.caching = std::make_unique<providers::CachingGenerator>(*p.generator, p.cache.get(), p.retry, p.limiter.get());

  if (c.embedding.stub == "hash-bucket") {
    p.embedder = std::make_unique<providers::HashBucketEmbedder>(c.embedding.dimension);
  } else if (c.embedding.stub == "bag-of-words") {
    p.embedder = std::make_unique<providers::BagOfWordsEmbedder>(c.embedding.dimension);
  } else {
    auto live = std::make_unique<providers::OpenAIEmbedder>(c.embedding.endpoint);
    if (observer) live->observe(observer);
    p.embedder = std::move(live);
    p.persist_embeddings = true;
  }
  p.embed_batch = c.embedding.batch_size;
  return p;
}

inline std::uint64_t item_seed(const RunConfig& c, const std::string& id) { return derive_seed(c.seed, fnv1a64(id)); }

struct StageResult {
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;
  std::optional<Error> fatal;  // config error or provider outage: the run stopped

  bool partial() const { return failed + skipped > 0; }
  void raise() const {
    if (fatal) throw *fatal;
  }
  StageResult& operator+=(const StageResult& o) {
    ok += o.ok;
    failed += o.failed;
    skipped += o.skipped;
    if (!fatal && o.fatal) fatal = o.fatal;
    return *this;
  }
};

/// Runs work(i) for every item with failure isolation. A failed item gets a
/// row with status "failed" and the error. A config error, or a streak of
/// provider-unavailable failures, stops the run: later items are "skipped"
/// and the result carries the fatal error, to raise once the partial
/// artifact is on disk.
inline StageResult for_each_item(std::size_t count, std::size_t width, int outage_threshold, std::vector<json>& rows,
                                 const std::function<json(std::size_t)>& identity,
                                 const std::function<json(std::size_t)>& work) {
  rows.assign(count, json());
  std::atomic<int> streak{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  StageResult result;
  util::parallel_for(count, width, [&](std::size_t i) {
    if (stop) {
      rows[i] = identity(i);
      rows[i]["status"] = "skipped";
      return;
    }
    try {
      rows[i] = work(i);
      if (!rows[i].contains("status")) rows[i]["status"] = "ok";
      if (rows[i]["status"] == "ok") streak = 0;
    } catch (const Error& e) {
      rows[i] = identity(i);
      rows[i]["status"] = "failed";
      rows[i]["error"] = e.what();
      if (e.kind() == ErrorKind::Config) {
        std::lock_guard lock(mu);
        if (!result.fatal) result.fatal = e;
        stop = true;
      } else if (e.kind() == ErrorKind::ProviderUnavailable && ++streak >= outage_threshold) {
        std::lock_guard lock(mu);
        if (!result.fatal) {
          result.fatal = Error(ErrorKind::ProviderUnavailable,
                               "stopping after " + std::to_string(outage_threshold) +
                                   " consecutive provider failures (last: " + e.message() + ")");
        }
        stop = true;
      }
    } catch (const std::exception& e) {
      rows[i] = identity(i);
      rows[i]["status"] = "failed";
      rows[i]["error"] = std::string("internal: ") + e.what();
    }
  });
  for (const auto& r : rows) {
    const auto s = r.value("status", "");
    if (s == "ok") ++result.ok;
    else if (s == "skipped") ++result.skipped;
    else ++result.failed;
  }
  return result;
}

/// Distinct candidates other than the original, in order; more than n are
/// subsampled uniformly, fewer are padded with random repeats.
inline std::vector<std::string> finalize_perturbations(const std::string& original,
                                                       const std::vector<std::string>& candidates, std::size_t n,
                                                       Rng& rng) {
  std::vector<std::string> unique;
  for (const auto& c : candidates) {
    if (c.empty() || c == original) continue;
    if (std::find(unique.begin(), unique.end(), c) == unique.end()) unique.push_back(c);
  }
  if (unique.empty()) throw Error(ErrorKind::PerturbationFailure, "no usable perturbations for: " + original);
  std::vector<std::string> out;
  if (unique.size() > n) {
    std::vector<std::size_t> idx(unique.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) out.push_back(unique[i]);
    return out;
  }
  out = unique;
  std::uniform_int_distribution<std::size_t> pick(0, unique.size() - 1);
  while (out.size() < n) out.push_back(unique[pick(rng)]);
  return out;
}

/// One paraphrase per line; list markers and wrapping quotes are removed.
inline std::vector<std::string> parse_paraphrases(const std::string& raw) {
  std::vector<std::string> out;
  std::istringstream in(raw);
  std::string line;
  while (std::getline(in, line)) {
    std::string_view s = providers::detail::trim(line);
    std::size_t k = 0;
    while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
    if (k > 0 && k < s.size() && (s[k] == '.' || s[k] == ')' || s[k] == ':')) s.remove_prefix(k + 1);
    else if (!s.empty() && (s[0] == '-' || s[0] == '*')) s.remove_prefix(1);
    s = providers::detail::trim(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    s = providers::detail::trim(s);
    if (!s.empty()) out.emplace_back(s);
  }
  return out;
}

using FixedPerturbations = std::map<std::string, std::vector<std::string>>;

/// {"id": ..., "perturbations": [...]} per line.
inline FixedPerturbations load_fixed_perturbations(const std::string& path) {
  FixedPerturbations out;
  for (const auto& row : read_jsonl(path, "(a perturbation file)")) {
    try {
      out[row.at("id").get<std::string>()] = row.at("perturbations").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Config, path + ": " + e.what());
    }
  }
  return out;
}

/// Row with "states": the original question followed by n perturbations.
inline json perturb_item(const DatasetItem& item, const RunConfig& c, Providers& p,
                         const gaap::SubstitutionLexicon& lexicon, const FixedPerturbations& fixed) {
  const std::uint64_t seed = item_seed(c, item.id);
  const auto n = static_cast<std::size_t>(c.n);
  json row{{"id", item.id}, {"mode", to_string(c.perturb_mode)}};
  std::vector<std::string> states{item.question};
  Rng rng = make_rng(seed, 1);
  switch (c.perturb_mode) {
    case PerturbMode::Gaap: {
      gaap::GaapConfig g = c.gaap;
      g.target_count = c.n;
      g.seed = seed;
      auto emb = p.item_embedder();
      const auto ev = gaap::evolve(item.question, g, lexicon,
                                   [&](const std::vector<std::string>& texts) { return emb->embed(texts); });
      const auto set = gaap::build_perturbation_set(ev, g, rng);
      states = set.texts();
      std::vector<std::string> keywords;
      for (const auto& k : ev.keywords) keywords.push_back(k.token);
      row["keywords"] = keywords;
      row["generations"] = ev.generations.size();
      row["termination"] = std::string(gaap::to_string(ev.termination));
      break;
    }
    case PerturbMode::Paraphrase: {
      providers::GenerationRequest req;
      req.item_id = item.id;
      req.template_id = "paraphrase";
      req.prompt = providers::render(c.prompts.paraphrase, {{"number", std::to_string(n)}, {"sentence", item.question}});
      req.temperature = c.paraphrase_temperature;
      req.seed = c.seed;
      const auto res = p.caching->generate(req);
      for (auto& s : finalize_perturbations(item.question, parse_paraphrases(res.raw), n, rng)) states.push_back(s);
      break;
    }
    case PerturbMode::File: {
      auto it = fixed.find(item.id);
      if (it == fixed.end()) throw Error(ErrorKind::PerturbationFailure, "no fixed perturbations for " + item.id);
      for (auto& s : finalize_perturbations(item.question, it->second, n, rng)) states.push_back(s);
      break;
    }
  }
  row["states"] = states;
  return row;
}

/// r responses for each of the n+1 states at temperature t, plus the
/// correctness verdict on the first response to the original question.
inline json generate_item(const DatasetItem& item, const json& perturbation, double t, const RunConfig& c,
                          Providers& p) {
  const auto states = perturbation.at("states").get<std::vector<std::string>>();
  if (states.size() != static_cast<std::size_t>(c.n) + 1) {
    throw Error(ErrorKind::Config, "item " + item.id + " has " + std::to_string(states.size()) +
                                       " states but n+1 = " + std::to_string(c.n + 1) + "; rerun `perturb`");
  }
  const auto r = static_cast<std::size_t>(c.r);
  std::vector<std::vector<std::string>> responses(states.size(), std::vector<std::string>(r));
  std::atomic<bool> failed{false};
  const auto errors = util::parallel_for(states.size() * r, p.request_width, [&](std::size_t k) {
    if (failed) return;
    const std::size_t i = k / r, rep = k % r;
    providers::GenerationRequest req;
    req.item_id = item.id;
    req.template_id = item.category;
    req.question = states[i];
    req.prompt = render_prompt(item, states[i], c.prompts);
    req.temperature = t;
    req.replicate = static_cast<int>(rep);
    req.seed = c.seed;
    try {
      responses[i][rep] = p.caching->generate(req).cleaned;
    } catch (...) {
      failed = true;
      throw;
    }
  });
  util::rethrow_first(errors);
  std::size_t empty = 0;
  for (const auto& s : responses)
    for (const auto& a : s) empty += a.empty();

  providers::JudgeContext judge{providers::parse_judge_mode(c.judge_mode), p.caching.get(), &c.prompts,
                                c.judge_model, item.id};
  const bool correct = providers::judge_correctness(item.question, item.reference, responses[0][0], judge);
  return json{{"id", item.id},           {"temperature", t}, {"responses", responses},
              {"answer", responses[0][0]}, {"correct", correct}, {"empty_responses", empty}};
}

/// All selected measures from one set of bootstrap draws. Embeddings of the
/// item's distinct texts are returned encoded through `embeddings`.
inline json score_item(const json& perturbation, const json& response, const RunConfig& c, Providers& p,
                       std::map<std::string, json>* embeddings = nullptr) {
  const std::string id = perturbation.at("id");
  const auto states = perturbation.at("states").get<std::vector<std::string>>();
  auto responses = response.at("responses").get<std::vector<std::vector<std::string>>>();
  for (auto& s : responses)
    for (auto& a : s)
      if (a.empty()) a = kEmptyResponse;
  auto emb = p.item_embedder();

  const auto x = emb->embed(states);
  const InputWalk input = InputWalk::from_affinity(build_affinity_matrix(x));
  std::vector<std::vector<EmbeddingVector>> per_state;
  for (const auto& s : responses) per_state.push_back(emb->embed(s));
  const ReplicatedResponses replicated(std::move(per_state));

  std::vector<Measure> boot;
  bool want_nr = false;
  for (Measure m : c.measures) {
    if (m == Measure::NrInvEntropy) want_nr = true;
    else boot.push_back(m);
  }
  json values = json::object(), traces = json::object();
  const auto scorer = cosine_scorer();
  if (!boot.empty()) {
    const BootstrapPlan plan{static_cast<std::size_t>(c.bootstraps), derive_seed(item_seed(c, id), 0xB0075)};
    for (const auto& [m, res] : bootstrap_measures(input, replicated, scorer, plan, boot)) {
      values[std::string(measure_name(m))] = res.value;
      traces[std::string(measure_name(m))] = res.per_bootstrap;
    }
  }
  if (want_nr) {
    const auto nr = nr_inv_entropy(input, replicated, scorer);
    values[std::string(measure_name(Measure::NrInvEntropy))] = nr.value;
    traces[std::string(measure_name(Measure::NrInvEntropy))] = nr.per_bootstrap;
  }
  if (embeddings) {
    auto add = [&](const std::string& t) {
      if (!embeddings->count(t)) (*embeddings)[t] = providers::encode_embedding(emb->embed({t}).front());
    };
    for (const auto& s : states) add(s);
    for (const auto& s : responses)
      for (const auto& a : s) add(a);
  }
  return json{{"id", id},
              {"temperature", response.at("temperature")},
              {"correct", response.at("correct")},
              {"measures", values},
              {"bootstrap", traces}};
}

/// Shared inputs of every stage.
struct Stage {
  RunConfig config;
  fs::path dir;
  std::vector<DatasetItem> items;
  Providers* providers = nullptr;
};

inline std::map<std::string, json> index_rows(const std::vector<json>& rows) {
  std::map<std::string, json> out;
  for (const auto& r : rows) out[r.at("id").get<std::string>()] = r;
  return out;
}

inline json id_row(const std::string& id) { return json{{"id", id}}; }

inline StageResult perturb_stage(const Stage& st) {
  const auto& c = st.config;
  gaap::SubstitutionLexicon lexicon;
  if (c.perturb_mode == PerturbMode::Gaap) {
    if (c.lexicon.empty()) warn("no lexicon configured; GAAP can only delete keywords");
    else lexicon = gaap::SubstitutionLexicon::load(c.lexicon);
  }
  FixedPerturbations fixed;
  if (c.perturb_mode == PerturbMode::File) fixed = load_fixed_perturbations(c.perturb_file);
  std::vector<json> rows;
  const auto result = for_each_item(
      st.items.size(), c.concurrency, c.abort_after_provider_failures, rows,
      [&](std::size_t i) { return id_row(st.items[i].id); },
      [&](std::size_t i) { return perturb_item(st.items[i], c, *st.providers, lexicon, fixed); });
  write_jsonl(perturbations_path(st.dir), rows);
  return result;
}

inline StageResult generate_stage(const Stage& st, double t) {
  const auto& c = st.config;
  const auto perturbations = index_rows(read_jsonl(perturbations_path(st.dir), "perturb"));
  std::vector<json> rows;
  const auto result = for_each_item(
      st.items.size(), c.concurrency, c.abort_after_provider_failures, rows,
      [&](std::size_t i) { return json{{"id", st.items[i].id}, {"temperature", t}}; },
      [&](std::size_t i) -> json {
        const auto& item = st.items[i];
        auto it = perturbations.find(item.id);
        if (it == perturbations.end()) throw Error(ErrorKind::MissingArtifact, item.id + " has no perturbations");
        if (it->second.value("status", "") != "ok")
          throw Error(ErrorKind::PerturbationFailure, "perturbation step failed for " + item.id);
        return generate_item(item, it->second, t, c, *st.providers);
      });
  write_jsonl(responses_path(st.dir, t), rows);
  return result;
}

inline StageResult score_stage(const Stage& st, double t) {
  const auto& c = st.config;
  const auto perturbations = index_rows(read_jsonl(perturbations_path(st.dir), "perturb"));
  const auto responses = index_rows(read_jsonl(responses_path(st.dir, t), "generate"));
  std::vector<json> rows;
  std::vector<std::map<std::string, json>> embeddings(st.items.size());
  const auto result = for_each_item(
      st.items.size(), c.concurrency, c.abort_after_provider_failures, rows,
      [&](std::size_t i) { return json{{"id", st.items[i].id}, {"temperature", t}}; },
      [&](std::size_t i) -> json {
        const auto& id = st.items[i].id;
        auto pt = perturbations.find(id);
        auto rs = responses.find(id);
        if (pt == perturbations.end() || rs == responses.end())
          throw Error(ErrorKind::MissingArtifact, id + " is missing upstream artifacts");
        if (rs->second.value("status", "") != "ok")
          throw Error(ErrorKind::ProviderContract, "generation step failed for " + id);
        return score_item(pt->second, rs->second, c, *st.providers, &embeddings[i]);
      });
  std::map<std::string, json> merged;
  for (auto& m : embeddings) merged.merge(m);
  std::vector<json> emb_rows;
  for (auto& [text, e] : merged) emb_rows.push_back(json{{"text", text}, {"embedding", std::move(e)}});
  write_jsonl(embeddings_path(st.dir, t), emb_rows);
  write_jsonl(scores_path(st.dir, t), rows);
  return result;
}

/// Uncertainty records of one measure from score rows that succeeded.
inline std::vector<eval::EvalRecord> eval_records(const std::vector<json>& scores, Measure m) {
  std::vector<eval::EvalRecord> out;
  const std::string name(measure_name(m));
  for (const auto& row : scores) {
    if (row.value("status", "") != "ok") continue;
    const auto& values = row.at("measures");
    if (!values.contains(name)) continue;
    out.push_back({row.at("id").get<std::string>(), uncertainty_orientation(m) * values.at(name).get<double>(),
                   row.at("correct").get<bool>()});
  }
  return out;
}

inline json metric_entry(std::span<const eval::EvalRecord> recs, const eval::Metric& metric, std::size_t resamples,
                         std::uint64_t seed) {
  json out;
  try {
    out["point"] = metric(recs);
  } catch (const Error& e) {
    out["point"] = nullptr;
    out["error"] = e.what();
    return out;
  }
  try {
    const auto s = eval::bootstrap_statistic(recs, metric, resamples, seed);
    out["mean"] = s.mean;
    out["std"] = s.stddev;
  } catch (const Error& e) {
    out["error"] = e.what();
  }
  return out;
}

/// Brier on the odd positions with the isotonic map fitted on the even ones.
inline double brier_held_out(std::span<const eval::EvalRecord> recs) {
  std::vector<eval::EvalRecord> fit, test;
  for (std::size_t k = 0; k < recs.size(); ++k) (k % 2 == 0 ? fit : test).push_back(recs[k]);
  if (fit.size() < 2 || test.empty()) throw Error(ErrorKind::UndefinedMetric, "too few records for a held-out fit");
  return eval::brier(test, eval::isotonic_fit(fit));
}

inline StageResult evaluate_stage(const Stage& st) {
  const auto& c = st.config;
  const std::uint64_t seed = derive_seed(c.seed, 0xE7A1);
  json summary{{"resamples", c.eval_resamples},
               {"seed", c.seed},
               {"prr", "PRR (fixed construction): (AUC_random - AUC_uq) / (AUC_random - AUC_oracle) over "
                       "error-count rejection curves, ties averaged"},
               {"brier_fit", c.brier_holdout ? "held-out" : "same-split"},
               {"temperatures", json::object()}};
  std::vector<json> records;
  std::string curves = "temperature,measure,rejected_fraction,uncertainty,random,oracle\n";
  StageResult result;
  for (double t : c.temperatures) {
    const auto scores = read_jsonl(scores_path(st.dir, t), "score");
    std::size_t ok = 0, correct = 0;
    for (const auto& row : scores) {
      if (row.value("status", "") != "ok") {
        ++result.failed;
        continue;
      }
      ++ok;
      correct += row.at("correct").get<bool>();
      json rec{{"id", row.at("id")}, {"temperature", t}, {"correct", row.at("correct")}, {"uncertainty", json::object()}};
      for (Measure m : c.measures) {
        const std::string name(measure_name(m));
        if (row.at("measures").contains(name))
          rec["uncertainty"][name] = uncertainty_orientation(m) * row.at("measures").at(name).get<double>();
      }
      records.push_back(std::move(rec));
    }
    result.ok += ok;
    json block{{"items", scores.size()},
               {"scored", ok},
               {"accuracy", ok ? static_cast<double>(correct) / static_cast<double>(ok) : 0.0},
               {"measures", json::object()}};
    for (Measure m : c.measures) {
      const auto recs = eval_records(scores, m);
      const std::string name(measure_name(m));
      json entry;
      entry["auroc"] = metric_entry(recs, eval::auroc, c.eval_resamples, seed);
      entry["prr"] = metric_entry(recs, eval::prr, c.eval_resamples, seed);
      if (c.brier_holdout) {
        entry["brier"] = metric_entry(recs, brier_held_out, c.eval_resamples, seed);
      } else {
        entry["brier"] = metric_entry(
            recs, [](std::span<const eval::EvalRecord> r) { return eval::brier(r); }, c.eval_resamples, seed);
      }
      block["measures"][name] = entry;
      if (recs.empty()) continue;
      const auto rc = eval::rejection_curves(recs);
      for (std::size_t k = 0; k < rc.uncertainty.size(); ++k) {
        std::ostringstream line;
        line << eval::format_temperature(t) << ',' << name << ','
             << providers::format_double(static_cast<double>(k) / static_cast<double>(recs.size())) << ','
             << providers::format_double(rc.uncertainty[k]) << ',' << providers::format_double(rc.random[k]) << ','
             << providers::format_double(rc.oracle[k]) << '\n';
        curves += line.str();
      }
    }
    summary["temperatures"][eval::format_temperature(t)] = block;
  }
  write_json(st.dir / "summary.json", summary);
  write_jsonl(st.dir / "records.jsonl", records);
  write_text(st.dir / "rejection_curves.csv", curves);
  return result;
}

/// Generates and scores at every TSU temperature, then reports TSU over the
/// default subsets for each measure.
inline StageResult tsu_stage(const Stage& st) {
  const auto& c = st.config;
  StageResult result;
  std::vector<double> temps = c.tsu_temperatures;
  std::sort(temps.begin(), temps.end());
  for (double t : temps) {
    auto g = generate_stage(st, t);
    g.raise();
    auto s = score_stage(st, t);
    s.raise();
    result += s;
  }
  std::map<double, std::map<std::string, json>> by_temp;
  for (double t : temps) by_temp[t] = index_rows(read_jsonl(scores_path(st.dir, t), "score"));

  std::vector<std::string> excluded;
  std::vector<std::string> complete;
  for (const auto& item : st.items) {
    bool ok = true;
    for (double t : temps) {
      auto it = by_temp[t].find(item.id);
      ok = ok && it != by_temp[t].end() && it->second.value("status", "") == "ok";
    }
    (ok ? complete : excluded).push_back(item.id);
  }
  const auto subsets = eval::default_tsu_subsets(temps);
  json out{{"temperatures", temps}, {"items", complete.size()}, {"excluded", excluded}, {"measures", json::object()}};
  std::string csv = "measure,subset,tsu_percent\n";
  for (Measure m : c.measures) {
    const std::string name(measure_name(m));
    std::vector<eval::TemperatureSeries> series;
    for (const auto& id : complete) {
      eval::TemperatureSeries s{id, {}};
      for (double t : temps) {
        s.uq_by_temperature[t] = uncertainty_orientation(m) * by_temp[t][id].at("measures").at(name).get<double>();
      }
      series.push_back(std::move(s));
    }
    json per = json::object();
    for (const auto& sub : subsets) {
      if (series.empty()) {
        per[sub.label] = nullptr;
        continue;
      }
      const double v = eval::tsu(series, sub.temperatures);
      per[sub.label] = v;
      csv += name + ",\"" + sub.label + "\"," + providers::format_double(100.0 * v) + "\n";
    }
    out["measures"][name] = per;
    out["subset_order"] = [&] {
      std::vector<std::string> labels;
      for (const auto& sub : subsets) labels.push_back(sub.label);
      return labels;
    }();
  }
  write_json(st.dir / "tsu.json", out);
  write_text(st.dir / "tsu.csv", csv);
  return result;
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

/// Plain-text tables and a flat CSV from summary.json (and tsu.json when
/// present).
inline void report_stage(const Stage& st) {
  const json summary = read_json(st.dir / "summary.json", "evaluate");
  std::ostringstream txt;
  std::string csv = "temperature,measure,metric,point,mean,std\n";
  txt << "Uncertainty evaluation (" << summary.at("resamples").get<std::size_t>() << " bootstrap resamples, Brier fit "
      << summary.at("brier_fit").get<std::string>() << ")\n";
  txt << summary.at("prr").get<std::string>() << "\n\n";
  for (const auto& [temp, block] : summary.at("temperatures").items()) {
    txt << "temperature " << temp << ": " << block.at("scored") << "/" << block.at("items")
        << " items scored, accuracy " << fixed(block.at("accuracy").get<double>(), 3) << "\n";
    txt << "  measure           AUROC             PRR               Brier\n";
    for (const auto& [measure, entry] : block.at("measures").items()) {
      std::string line = "  " + measure;
      line.resize(20, ' ');
      for (const char* metric : {"auroc", "prr", "brier"}) {
        const auto& e = entry.at(metric);
        std::string cell;
        if (e.contains("mean")) {
          cell = fixed(e["mean"].get<double>()) + " +- " + fixed(e["std"].get<double>());
        } else if (!e.at("point").is_null()) {
          cell = fixed(e["point"].get<double>()) + " (no spread)";
        } else {
          cell = "undefined";
        }
        cell.resize(18, ' ');
        line += cell;
        csv += temp + "," + measure + "," + metric + "," +
               (e.at("point").is_null() ? "" : providers::format_double(e["point"].get<double>())) + "," +
               (e.contains("mean") ? providers::format_double(e["mean"].get<double>()) : "") + "," +
               (e.contains("std") ? providers::format_double(e["std"].get<double>()) : "") + "\n";
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      txt << line << "\n";
    }
    txt << "\n";
  }
  if (fs::exists(st.dir / "tsu.json")) {
    const json tsu = read_json(st.dir / "tsu.json", "tsu");
    txt << "TSU (% of " << tsu.at("items") << " questions with strictly increasing uncertainty)\n";
    const auto labels = tsu.value("subset_order", std::vector<std::string>{});
    for (const auto& [measure, per] : tsu.at("measures").items()) {
      txt << "  " << measure << "\n";
      for (const auto& label : labels) {
        std::string cell = "    " + label;
        cell.resize(22, ' ');
        txt << cell << (per.at(label).is_null() ? "n/a" : fixed(100.0 * per.at(label).get<double>(), 1)) << "\n";
      }
    }
  }
  write_text(st.dir / "report.txt", txt.str());
  write_text(st.dir / "metrics.csv", csv);
}

struct UncertaintyReport {
  std::vector<json> rows;  // one per item: id, status, states, responses, correct, measures, bootstrap
  StageResult result;
};

/// The whole per-question procedure in memory at the first configured
/// temperature: perturb, generate, judge, score.
inline UncertaintyReport run_uq(const std::vector<DatasetItem>& items, const RunConfig& c, Providers& p,
                                const gaap::SubstitutionLexicon& lexicon, const FixedPerturbations& fixed = {}) {
  c.validate();
  UncertaintyReport report;
  const double t = c.temperatures.front();
  report.result = for_each_item(
      items.size(), c.concurrency, c.abort_after_provider_failures, report.rows,
      [&](std::size_t i) { return id_row(items[i].id); },
      [&](std::size_t i) {
        const auto& item = items[i];
        json pert = perturb_item(item, c, p, lexicon, fixed);
        json resp = generate_item(item, pert, t, c, p);
        json score = score_item(pert, resp, c, p);
        json row = score;
        row["states"] = pert["states"];
        row["responses"] = resp["responses"];
        return row;
      });
  return report;
}

}  // namespace invuq::pipeline
