#pragma once

#include <atomic>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "invuq/error.hpp"
#include "invuq/gaap/text.hpp"
#include "invuq/providers/provider.hpp"
#include "invuq/rng.hpp"

namespace invuq::providers {

/// Answers by item id, then by question text, then with the fallback.
class CannedMapGenerator : public Generator {
 public:
  explicit CannedMapGenerator(std::map<std::string, std::string> answers, std::string fallback = {})
      : answers_(std::move(answers)), fallback_(std::move(fallback)) {}

  std::string generate(const GenerationRequest& r) override {
    ++calls_;
    if (auto it = answers_.find(r.item_id); it != answers_.end()) return it->second;
    if (auto it = answers_.find(r.question); it != answers_.end()) return it->second;
    if (!fallback_.empty()) return fallback_;
    throw Error(ErrorKind::ProviderContract, "canned stub has no answer for '" + r.item_id + "'");
  }
  std::string model() const override { return "stub-canned"; }
  std::size_t calls() const { return calls_; }

 private:
  std::map<std::string, std::string> answers_;
  std::string fallback_;
  std::atomic<std::size_t> calls_{0};
};

/// Picks uniformly from an answer list. The choice is a hash of the stub seed
/// and the request fingerprint, so it does not depend on call order. Answer
/// lists may be set per item; others use the default list.
class RouletteGenerator : public Generator {
 public:
  RouletteGenerator(std::vector<std::string> answers, std::uint64_t seed,
                    std::map<std::string, std::vector<std::string>> per_item = {})
      : default_(std::move(answers)), per_item_(std::move(per_item)), seed_(seed) {
    if (default_.empty() && per_item_.empty()) throw Error(ErrorKind::Config, "roulette stub needs answers");
  }

  std::string generate(const GenerationRequest& r) override {
    ++calls_;
    const auto it = per_item_.find(r.item_id);
    const auto& answers = it != per_item_.end() ? it->second : default_;
    if (answers.empty()) throw Error(ErrorKind::ProviderContract, "roulette stub has no answers for " + r.item_id);
    const std::uint64_t h = derive_seed(seed_, fnv1a64(fingerprint(r)));
    return answers[h % answers.size()];
  }
  std::string model() const override { return "stub-roulette"; }

 private:
  std::vector<std::string> default_;
  std::map<std::string, std::vector<std::string>> per_item_;
  std::uint64_t seed_;
  std::atomic<std::size_t> calls_{0};
};

/// Returns the prompt unchanged.
class EchoGenerator : public Generator {
 public:
  std::string generate(const GenerationRequest& r) override { return r.prompt; }
  std::string model() const override { return "stub-echo"; }
};

/// One-hot vector at hash(text) mod dim: distinct texts are orthogonal
/// barring a bucket collision (about k^2 / 2dim for k texts).
class HashBucketEmbedder : public Embedder {
 public:
  explicit HashBucketEmbedder(Eigen::Index dim = 65536) : dim_(dim) {
    if (dim < 1) throw Error(ErrorKind::Config, "embedding dimension must be >= 1");
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      if (t.empty()) throw Error(ErrorKind::InvalidInput, "cannot embed an empty string");
      Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
      v[static_cast<Eigen::Index>(fnv1a64(t) % static_cast<std::uint64_t>(dim_))] = 1.0;
      out.emplace_back(std::move(v));
    }
    return out;
  }
  std::string model() const override { return "stub-hash-bucket-" + std::to_string(dim_); }

 private:
  Eigen::Index dim_;
};

/// Lower-cased token counts hashed into dim buckets.
class BagOfWordsEmbedder : public Embedder {
 public:
  explicit BagOfWordsEmbedder(Eigen::Index dim = 512) : dim_(dim) {
    if (dim < 1) throw Error(ErrorKind::Config, "embedding dimension must be >= 1");
  }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) {
      if (t.empty()) throw Error(ErrorKind::InvalidInput, "cannot embed an empty string");
      Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
      for (const auto& tok : gaap::tokenize(t)) {
        v[static_cast<Eigen::Index>(fnv1a64(gaap::to_lower(tok)) % static_cast<std::uint64_t>(dim_))] += 1.0;
      }
      out.emplace_back(std::move(v));
    }
    return out;
  }
  std::string model() const override { return "stub-bag-of-words-" + std::to_string(dim_); }

 private:
  Eigen::Index dim_;
};

}  // namespace invuq::providers
