#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "invuq/error.hpp"
#include "invuq/rng.hpp"
#include "invuq/similarity.hpp"

namespace invuq::providers {

struct GenerationRequest {
  std::string item_id;      // lets stubs answer per dataset item
  std::string template_id;  // qa, multiple-choice, math, paraphrase, judge
  std::string question;     // the (possibly perturbed) question text
  std::string prompt;       // fully rendered prompt sent to the model
  double temperature = 1.0;
  int replicate = 0;
  std::string model;
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(temperature) || temperature < 0.0)
      throw Error(ErrorKind::InvalidInput, "temperature must be finite and >= 0");
    if (replicate < 0) throw Error(ErrorKind::InvalidInput, "replicate index must be >= 0");
  }
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Cache key over model, prompt, temperature, replicate and seed.
inline std::string fingerprint(const GenerationRequest& r) {
  std::string key = r.model;
  key += '\x1f';
  key += r.prompt;
  key += '\x1f';
  key += format_double(r.temperature);
  key += '\x1f';
  key += std::to_string(r.replicate);
  key += '\x1f';
  key += std::to_string(r.seed);
  // Two independent 64-bit hashes keep accidental collisions out of reach.
  return hex64(fnv1a64(key)) + hex64(splitmix64(fnv1a64(key) ^ fnv1a64(std::string(key.rbegin(), key.rend()))));
}

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const GenerationRequest& request) = 0;
  virtual std::string model() const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  /// One vector per text, same order.
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
  virtual std::string model() const = 0;
};

/// Replaces {name} placeholders; unknown names are left as written.
inline std::string render(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string::npos) {
        auto it = vars.find(tmpl.substr(i + 1, close - i - 1));
        if (it != vars.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

struct PromptTemplates {
  std::string qa = "{question} Answer concisely and return only the name.";
  std::string multiple_choice = "{question} {choices} Answer concisely and return only the name.";
  std::string math = "{question} Answer concisely and return only the result itself.";
  std::string paraphrase = "Please Provide {number} paraphrases for this sentence: {sentence}";
  std::string judge =
      "Are the following two answers to my question Q semantically equivalent?\n"
      "Q: {question}\nA1: {reference}\nA2: {answer}\n"
      "Please answer with a single word, either Yes or No.";

  const std::string& for_category(const std::string& category) const {
    if (category == "qa") return qa;
    if (category == "multiple-choice") return multiple_choice;
    if (category == "math") return math;
    throw Error(ErrorKind::Config, "no prompt template for category '" + category + "'");
  }
};

}  // namespace invuq::providers
