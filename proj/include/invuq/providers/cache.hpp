#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "invuq/error.hpp"
#include "invuq/providers/clean.hpp"
#include "invuq/providers/provider.hpp"
#include "invuq/util/base64.hpp"
#include "invuq/util/parallel.hpp"

namespace invuq::providers {

using json = nlohmann::json;

/// {"dim", "b64"} for dense vectors; {"dim", "index", "b64"} holding only the
/// nonzero entries when fewer than a quarter are nonzero.
inline json encode_embedding(const EmbeddingVector& v) {
  const auto& x = v.values();
  std::vector<std::int64_t> index;
  std::vector<double> values;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0) {
      index.push_back(i);
      values.push_back(x[i]);
    }
  }
  json j;
  j["dim"] = x.size();
  if (index.size() * 4 < static_cast<std::size_t>(x.size())) {
    j["index"] = index;
    j["b64"] = util::encode_doubles(values.data(), values.size());
  } else {
    j["b64"] = util::encode_doubles(x.data(), static_cast<std::size_t>(x.size()));
  }
  return j;
}

inline EmbeddingVector decode_embedding(const json& j) {
  const auto dim = j.at("dim").get<Eigen::Index>();
  const auto values = util::decode_doubles(j.at("b64").get<std::string>());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  if (j.contains("index")) {
    const auto index = j.at("index").get<std::vector<Eigen::Index>>();
    if (index.size() != values.size()) throw Error(ErrorKind::InvalidInput, "sparse embedding size mismatch");
    for (std::size_t k = 0; k < index.size(); ++k) {
      if (index[k] < 0 || index[k] >= dim) throw Error(ErrorKind::InvalidInput, "sparse embedding index out of range");
      v[index[k]] = values[k];
    }
  } else {
    if (static_cast<Eigen::Index>(values.size()) != dim) throw Error(ErrorKind::InvalidInput, "embedding size mismatch");
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = values[static_cast<std::size_t>(i)];
  }
  return EmbeddingVector(std::move(v));
}

struct CachedResponse {
  std::string fingerprint;
  std::string raw;
  std::string cleaned;
  bool empty = false;  // cleaning left nothing
  std::string timestamp;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Append-only JSONL store under <dir>/gen and <dir>/emb, sharded by the
/// first two hex digits of the key, indexed in memory on open. Lines that do
/// not parse (say, a torn final write) are skipped with a warning.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_ / "gen");
    std::filesystem::create_directories(dir_ / "emb");
    load("gen", [this](const json& j) {
      CachedResponse r{j.at("fingerprint"), j.at("raw"), j.at("cleaned"), j.value("empty", false),
                       j.value("timestamp", "")};
      gen_[r.fingerprint] = std::move(r);
    });
    load("emb", [this](const json& j) { emb_.insert_or_assign(j.at("key").get<std::string>(), decode_embedding(j.at("embedding"))); });
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::optional<CachedResponse> get(const std::string& fp) const {
    std::shared_lock lock(mu_);
    auto it = gen_.find(fp);
    if (it == gen_.end()) return std::nullopt;
    return it->second;
  }

  void put(const CachedResponse& r, const GenerationRequest& req) {
    json j{{"fingerprint", r.fingerprint}, {"model", req.model},     {"temperature", req.temperature},
           {"replicate", req.replicate},   {"raw", r.raw},           {"cleaned", r.cleaned},
           {"empty", r.empty},             {"timestamp", r.timestamp}};
    std::unique_lock lock(mu_);
    append("gen", r.fingerprint, j);
    gen_[r.fingerprint] = r;
  }

  std::optional<EmbeddingVector> get_embedding(const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = emb_.find(key);
    if (it == emb_.end()) return std::nullopt;
    return it->second;
  }

  void put_embedding(const std::string& key, const std::string& model, const EmbeddingVector& v) {
    json j{{"key", key}, {"model", model}, {"embedding", encode_embedding(v)}};
    std::unique_lock lock(mu_);
    append("emb", key, j);
    emb_.insert_or_assign(key, v);
  }

  std::size_t generations() const {
    std::shared_lock lock(mu_);
    return gen_.size();
  }

 private:
  void load(const char* kind, const std::function<void(const json&)>& take) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir_ / kind)) {
      if (e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
          take(json::parse(line));
        } catch (const std::exception& ex) {
          warn("skipping cache line " + f.string() + ":" + std::to_string(lineno) + ": " + ex.what());
        }
      }
    }
  }

  void append(const char* kind, const std::string& key, const json& j) {
    const auto path = dir_ / kind / (key.substr(0, 2) + ".jsonl");
    std::ofstream out(path, std::ios::app);
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::Internal, "cannot write cache file " + path.string());
  }

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, CachedResponse> gen_;
  std::unordered_map<std::string, EmbeddingVector> emb_;
};

struct RetryPolicy {
  int retries = 3;
  double base_delay = 0.5;  // seconds, doubled per attempt
  double max_delay = 8.0;
  std::function<void(double)> sleep = [](double s) {
    std::this_thread::sleep_for(std::chrono::duration<double>(s));
  };
};

/// Runs fn, retrying provider-unavailable failures with exponential backoff.
/// Other errors (including config errors from 4xx replies) pass straight
/// through.
template <class Fn>
auto with_retries(const RetryPolicy& policy, const std::string& what, Fn&& fn) -> decltype(fn()) {
  double delay = policy.base_delay;
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ProviderUnavailable) throw;
      if (attempt >= policy.retries) {
        throw Error(ErrorKind::ProviderUnavailable,
                    what + ": giving up after " + std::to_string(attempt + 1) + " attempts: " + e.message());
      }
    }
    if (delay > 0.0 && policy.sleep) policy.sleep(std::min(delay, policy.max_delay));
    delay *= 2.0;
  }
}

/// Generation through the cache: hits never reach the provider.
class CachingGenerator {
 public:
  CachingGenerator(Generator& inner, ResponseCache* cache, RetryPolicy retry = {}, util::RateLimiter* limiter = nullptr)
      : inner_(inner), cache_(cache), retry_(std::move(retry)), limiter_(limiter) {}

  CachedResponse generate(GenerationRequest req) {
    if (req.model.empty()) req.model = inner_.model();
    req.validate();
    const std::string fp = fingerprint(req);
    if (cache_) {
      if (auto hit = cache_->get(fp)) {
        ++hits_;
        return *hit;
      }
    }
    const std::string raw = with_retries(retry_, "request " + fp, [&] {
      if (limiter_) limiter_->acquire();
      ++upstream_;
      return inner_.generate(req);
    });
    CachedResponse r{fp, raw, clean_response(raw, req.question, req.prompt), false, utc_timestamp()};
    r.empty = r.cleaned.empty();
    if (cache_) cache_->put(r, req);
    return r;
  }

  Generator& inner() { return inner_; }
  std::size_t upstream_calls() const { return upstream_; }
  std::size_t cache_hits() const { return hits_; }

 private:
  Generator& inner_;
  ResponseCache* cache_;
  RetryPolicy retry_;
  util::RateLimiter* limiter_;
  std::atomic<std::size_t> upstream_{0};
  std::atomic<std::size_t> hits_{0};
};

/// Deduplicates, memoizes (and optionally persists) embeddings, batching
/// upstream calls and checking that every vector has one dimension.
class CachingEmbedder : public Embedder {
 public:
  CachingEmbedder(Embedder& inner, ResponseCache* persist = nullptr, std::size_t batch_size = 64, RetryPolicy retry = {})
      : inner_(inner), persist_(persist), batch_size_(std::max<std::size_t>(1, batch_size)), retry_(std::move(retry)) {}

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) throw Error(ErrorKind::InvalidInput, "embed: no texts");
    std::vector<std::string> missing;
    {
      std::lock_guard lock(mu_);
      std::set<std::string> queued;
      for (const auto& t : texts) {
        if (t.empty()) throw Error(ErrorKind::InvalidInput, "cannot embed an empty string");
        if (memory_.count(t) || !queued.insert(t).second) continue;
        if (persist_) {
          if (auto v = persist_->get_embedding(key(t))) {
            memory_.emplace(t, *v);
            continue;
          }
        }
        missing.push_back(t);
      }
    }
    for (std::size_t start = 0; start < missing.size(); start += batch_size_) {
      const std::vector<std::string> batch(missing.begin() + static_cast<std::ptrdiff_t>(start),
                                           missing.begin() + static_cast<std::ptrdiff_t>(std::min(missing.size(), start + batch_size_)));
      auto got = with_retries(retry_, "embedding batch", [&] {
        ++upstream_;
        return inner_.embed(batch);
      });
      if (got.size() != batch.size()) throw Error(ErrorKind::ProviderContract, "embedder returned wrong batch size");
      std::lock_guard lock(mu_);
      for (std::size_t k = 0; k < batch.size(); ++k) {
        if (dim_ == 0) dim_ = got[k].dimension();
        if (got[k].dimension() != dim_) {
          throw Error(ErrorKind::ProviderContract, "embedding dimension " + std::to_string(got[k].dimension()) +
                                                       " differs from " + std::to_string(dim_));
        }
        if (persist_) persist_->put_embedding(key(batch[k]), inner_.model(), got[k]);
        memory_.insert_or_assign(batch[k], std::move(got[k]));
        ++embedded_;
      }
    }
    std::lock_guard lock(mu_);
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      const auto& v = memory_.at(t);
      if (dim_ == 0) dim_ = v.dimension();
      if (v.dimension() != dim_) throw Error(ErrorKind::ProviderContract, "embedding dimensions differ within a batch");
      out.push_back(v);
    }
    return out;
  }

  std::string model() const override { return inner_.model(); }
  std::size_t upstream_calls() const { return upstream_; }
  std::size_t embedded_texts() const { return embedded_; }

 private:
  std::string key(const std::string& text) const {
    const std::string k = inner_.model() + '\x1f' + text;
    return hex64(fnv1a64(k)) + hex64(splitmix64(fnv1a64(k) ^ fnv1a64(std::string(k.rbegin(), k.rend()))));
  }

  Embedder& inner_;
  ResponseCache* persist_;
  std::size_t batch_size_;
  RetryPolicy retry_;
  std::mutex mu_;
  std::unordered_map<std::string, EmbeddingVector> memory_;
  Eigen::Index dim_ = 0;
  std::atomic<std::size_t> upstream_{0};
  std::atomic<std::size_t> embedded_{0};
};

}  // namespace invuq::providers
