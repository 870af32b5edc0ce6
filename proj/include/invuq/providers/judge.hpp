#pragma once

#include <cctype>
#include <string>

#include "invuq/error.hpp"
#include "invuq/providers/cache.hpp"
#include "invuq/providers/provider.hpp"

namespace invuq::providers {

enum class JudgeMode { ExactMatch, Llm };

inline JudgeMode parse_judge_mode(const std::string& s) {
  if (s == "exact") return JudgeMode::ExactMatch;
  if (s == "llm") return JudgeMode::Llm;
  throw Error(ErrorKind::Config, "judge mode must be 'exact' or 'llm', got '" + s + "'");
}

/// Lower-case, punctuation dropped, whitespace collapsed.
inline std::string normalize_answer(const std::string& s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isalnum(c)) {
      if (space && !out.empty()) out.push_back(' ');
      space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c)) {
      space = true;
    }
  }
  return out;
}

enum class Verdict { Yes, No, Unclear };

inline Verdict parse_verdict(const std::string& reply) {
  std::string word;
  for (unsigned char c : reply) {
    if (std::isalpha(c)) word.push_back(static_cast<char>(std::tolower(c)));
    else if (!word.empty()) break;
  }
  if (word == "yes") return Verdict::Yes;
  if (word == "no") return Verdict::No;
  return Verdict::Unclear;
}

struct JudgeContext {
  JudgeMode mode = JudgeMode::ExactMatch;
  CachingGenerator* generator = nullptr;  // required for Llm
  const PromptTemplates* templates = nullptr;
  std::string model;
  std::string item_id;
};

/// Exact mode compares normalized strings. LLM mode asks the equivalence
/// question at temperature 0; an answer that is neither yes nor no is asked
/// once more (as a separate cache entry) before giving up.
inline bool judge_correctness(const std::string& question, const std::string& reference, const std::string& answer,
                              const JudgeContext& ctx) {
  if (ctx.mode == JudgeMode::ExactMatch) return normalize_answer(reference) == normalize_answer(answer);
  if (!ctx.generator) throw Error(ErrorKind::Config, "llm judge has no provider");
  static const PromptTemplates defaults;
  const PromptTemplates& t = ctx.templates ? *ctx.templates : defaults;
  GenerationRequest req;
  req.item_id = ctx.item_id;
  req.template_id = "judge";
  req.prompt = render(t.judge, {{"question", question}, {"reference", reference}, {"answer", answer}});
  req.temperature = 0.0;
  req.model = ctx.model;
  std::string last;
  for (int attempt = 0; attempt < 2; ++attempt) {
    req.replicate = attempt;
    last = ctx.generator->generate(req).raw;
    switch (parse_verdict(last)) {
      case Verdict::Yes: return true;
      case Verdict::No: return false;
      case Verdict::Unclear: break;
    }
  }
  throw Error(ErrorKind::Unjudgeable, "judge reply '" + last.substr(0, 80) + "' is neither yes nor no");
}

}  // namespace invuq::providers
