#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "invuq/error.hpp"
#include "invuq/gaap/keywords.hpp"
#include "invuq/gaap/lexicon.hpp"
#include "invuq/gaap/text.hpp"
#include "invuq/rng.hpp"
#include "invuq/similarity.hpp"

namespace invuq::gaap {

struct GaapConfig {
  double keyword_ratio = 0.3;
  int max_generations = 5;  // Num, counting Pop_0
  double similarity_floor = 0.7;
  int sample_interval = 1;  // tau
  int target_count = 9;     // n
  int selection_count = 10;
  int offspring_count = 10;
  int mutation_count = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(keyword_ratio > 0.0 && keyword_ratio <= 1.0)) throw Error(ErrorKind::Config, "keyword_ratio must be in (0, 1]");
    if (!(similarity_floor >= 0.0 && similarity_floor <= 1.0))
      throw Error(ErrorKind::Config, "similarity_floor must be in [0, 1]");
    if (max_generations < 1 || sample_interval < 1 || target_count < 1 || selection_count < 1 ||
        offspring_count < 1 || mutation_count < 1) {
      throw Error(ErrorKind::Config, "gaap counts must all be >= 1");
    }
  }
};

/// How an individual was produced. Chains back to the original text, so any
/// individual can be rebuilt with replay().
struct Lineage {
  enum class Kind { Original, Substitute, Delete, Crossover, Mutate };
  Kind kind = Kind::Original;
  std::size_t position = 0;         // edited index, or crossover point h
  std::string replacement;          // Substitute / Mutate with a substitute
  bool deletion = false;            // Mutate that deleted
  bool first_child = true;          // Crossover: which of the two offspring
  std::shared_ptr<const Lineage> parent;
  std::shared_ptr<const Lineage> other_parent;  // Crossover only
  TokenSequence root;               // Original only
};

struct Individual {
  TokenSequence sequence;
  std::string text;
  std::optional<EmbeddingVector> embedding;
  double fitness = std::numeric_limits<double>::quiet_NaN();
  std::shared_ptr<const Lineage> lineage;
};

inline Individual make_individual(TokenSequence seq, std::shared_ptr<const Lineage> lineage) {
  Individual ind;
  ind.text = detokenize(seq);
  ind.sequence = std::move(seq);
  ind.lineage = std::move(lineage);
  return ind;
}

/// Matches the case of the first letter of the token being replaced.
inline std::string match_case(const std::string& original, std::string alternative) {
  if (!original.empty() && !alternative.empty() && std::isupper(static_cast<unsigned char>(original[0]))) {
    alternative[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(alternative[0])));
  }
  return alternative;
}

inline TokenSequence substitute(const TokenSequence& s, std::size_t pos, const std::string& alternative) {
  std::vector<std::string> t = s.tokens();
  // Multiword lexicon entries are stored with underscores.
  std::string words = alternative;
  std::replace(words.begin(), words.end(), '_', ' ');
  t.at(pos) = match_case(t[pos], std::move(words));
  return TokenSequence(std::move(t));
}

inline TokenSequence erase(const TokenSequence& s, std::size_t pos) {
  std::vector<std::string> t = s.tokens();
  t.erase(t.begin() + static_cast<std::ptrdiff_t>(pos));
  return TokenSequence(std::move(t));
}

/// Offspring (a_1..a_h, b_{h+1}..b_p) and (b_1..b_h, a_{h+1}..a_p), with p the
/// shorter parent's length.
inline std::pair<TokenSequence, TokenSequence> crossover_at(const TokenSequence& a, const TokenSequence& b,
                                                            std::size_t h) {
  const std::size_t p = std::min(a.size(), b.size());
  if (p < 2) throw Error(ErrorKind::InvalidInput, "crossover needs parents with >= 2 tokens");
  if (h < 1 || h > p - 1) throw Error(ErrorKind::InvalidInput, "crossover point out of range");
  std::vector<std::string> x, y;
  for (std::size_t i = 0; i < p; ++i) {
    x.push_back(i < h ? a[i] : b[i]);
    y.push_back(i < h ? b[i] : a[i]);
  }
  return {TokenSequence(std::move(x)), TokenSequence(std::move(y))};
}

/// Samples h uniformly from 1..p-1. Returns nullopt when a parent is too short.
inline std::optional<std::pair<TokenSequence, TokenSequence>> crossover(const TokenSequence& a, const TokenSequence& b,
                                                                        Rng& rng, std::size_t* point = nullptr) {
  const std::size_t p = std::min(a.size(), b.size());
  if (p < 2) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(1, p - 1);
  const std::size_t h = pick(rng);
  if (point) *point = h;
  return crossover_at(a, b, h);
}

/// Rebuilds the token sequence from the recorded edits.
inline TokenSequence replay(const Lineage& l) {
  switch (l.kind) {
    case Lineage::Kind::Original:
      return l.root;
    case Lineage::Kind::Substitute:
      return substitute(replay(*l.parent), l.position, l.replacement);
    case Lineage::Kind::Delete:
      return erase(replay(*l.parent), l.position);
    case Lineage::Kind::Mutate:
      return l.deletion ? erase(replay(*l.parent), l.position) : substitute(replay(*l.parent), l.position, l.replacement);
    case Lineage::Kind::Crossover: {
      auto kids = crossover_at(replay(*l.parent), replay(*l.other_parent), l.position);
      return l.first_child ? kids.first : kids.second;
    }
  }
  throw Error(ErrorKind::Internal, "unknown lineage kind");
}

inline std::shared_ptr<const Lineage> original_lineage(const TokenSequence& seq) {
  auto l = std::make_shared<Lineage>();
  l->root = seq;
  return l;
}

namespace detail {
inline void dedupe(std::vector<Individual>& pop) {
  std::set<std::string> seen;
  std::vector<Individual> out;
  for (auto& ind : pop) {
    if (seen.insert(ind.text).second) out.push_back(std::move(ind));
  }
  pop = std::move(out);
}
}  // namespace detail

/// Every single-keyword substitution plus each keyword's deletion, deduplicated
/// and never equal to the original.
inline std::vector<Individual> init_population(const TokenSequence& text, const std::vector<Keyword>& keywords,
                                               const SubstitutionLexicon& lexicon,
                                               std::shared_ptr<const Lineage> root = nullptr) {
  if (keywords.empty()) throw Error(ErrorKind::InvalidInput, "init_population: no keywords");
  if (!root) root = original_lineage(text);
  const std::string original = detokenize(text);
  std::vector<Individual> pop;
  for (const auto& kw : keywords) {
    if (kw.index >= text.size()) throw Error(ErrorKind::InvalidInput, "keyword index out of range");
    for (const auto& alt : lexicon.alternatives(text[kw.index])) {
      auto l = std::make_shared<Lineage>();
      l->kind = Lineage::Kind::Substitute;
      l->position = kw.index;
      l->replacement = alt;
      l->parent = root;
      pop.push_back(make_individual(substitute(text, kw.index, alt), l));
    }
    if (text.size() > 1) {
      auto l = std::make_shared<Lineage>();
      l->kind = Lineage::Kind::Delete;
      l->position = kw.index;
      l->parent = root;
      pop.push_back(make_individual(erase(text, kw.index), l));
    }
  }
  detail::dedupe(pop);
  std::erase_if(pop, [&](const Individual& i) { return i.text == original; });
  return pop;
}

/// `count` draws with replacement, P(i) = fitness_i / sum of fitness. Uses
/// one uniform draw per selection against the cumulative sums.
inline std::vector<Individual> roulette_select(const std::vector<Individual>& population, std::size_t count, Rng& rng) {
  if (population.empty()) throw Error(ErrorKind::InvalidInput, "roulette_select: empty population");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& ind : population) {
    if (!std::isfinite(ind.fitness) || ind.fitness < 0.0)
      throw Error(ErrorKind::InvalidInput, "roulette_select: fitness not computed");
    total += ind.fitness;
    cumulative.push_back(total);
  }
  const bool uniform = !(total > 0.0);
  if (uniform) warn("roulette_select: all fitness values are zero, selecting uniformly");
  std::uniform_real_distribution<double> u(0.0, uniform ? 1.0 : total);
  std::uniform_int_distribution<std::size_t> pick(0, population.size() - 1);
  std::vector<Individual> out;
  for (std::size_t k = 0; k < count; ++k) {
    if (uniform) {
      out.push_back(population[pick(rng)]);
      continue;
    }
    const double r = u(rng);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
    if (idx >= population.size()) idx = population.size() - 1;
    out.push_back(population[idx]);
  }
  return out;
}

/// Replaces or deletes one token. Positions holding a lexicon word are
/// preferred; with none, any position is eligible for deletion. Returns the
/// individual unchanged (and `changed` false) after bounded retries.
inline Individual mutate(const Individual& ind, const SubstitutionLexicon& lexicon, Rng& rng, bool* changed = nullptr) {
  if (ind.sequence.empty()) throw Error(ErrorKind::InvalidInput, "mutate: empty sequence");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ind.sequence.size(); ++i) {
    if (lexicon.contains(ind.sequence[i])) candidates.push_back(i);
  }
  if (candidates.empty()) {
    for (std::size_t i = 0; i < ind.sequence.size(); ++i) candidates.push_back(i);
  }
  const int max_tries = static_cast<int>(4 * candidates.size());
  std::uniform_int_distribution<std::size_t> pick_pos(0, candidates.size() - 1);
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    const std::size_t pos = candidates[pick_pos(rng)];
    const auto alts = lexicon.alternatives(ind.sequence[pos]);
    const bool can_delete = ind.sequence.size() > 1;
    const std::size_t options = alts.size() + (can_delete ? 1 : 0);
    if (options == 0) continue;
    std::uniform_int_distribution<std::size_t> pick_alt(0, options - 1);
    const std::size_t choice = pick_alt(rng);
    auto l = std::make_shared<Lineage>();
    l->kind = Lineage::Kind::Mutate;
    l->position = pos;
    l->parent = ind.lineage;
    TokenSequence seq;
    if (choice == alts.size()) {
      l->deletion = true;
      seq = erase(ind.sequence, pos);
    } else {
      l->replacement = alts[choice];
      seq = substitute(ind.sequence, pos, alts[choice]);
    }
    if (changed) *changed = true;
    return make_individual(std::move(seq), l);
  }
  if (changed) *changed = false;
  return ind;
}

using TextEmbedder = std::function<std::vector<EmbeddingVector>(const std::vector<std::string>&)>;

/// Fitness = affinity to the original text, with embeddings cached by text.
class FitnessEvaluator {
 public:
  FitnessEvaluator(TextEmbedder embedder, const std::string& original) : embedder_(std::move(embedder)) {
    original_ = lookup({original}).front();
  }

  const EmbeddingVector& original() const { return original_; }
  std::size_t embedded_texts() const { return cache_.size(); }

  void evaluate(std::vector<Individual>& pop) {
    std::vector<std::string> texts;
    for (const auto& ind : pop) texts.push_back(ind.text);
    const auto vectors = lookup(texts);
    for (std::size_t i = 0; i < pop.size(); ++i) {
      pop[i].embedding = vectors[i];
      pop[i].fitness = cosine_affinity(original_, vectors[i]);
    }
  }

 private:
  std::vector<EmbeddingVector> lookup(const std::vector<std::string>& texts) {
    std::vector<std::string> missing;
    std::set<std::string> queued;
    for (const auto& t : texts) {
      if (!cache_.count(t) && queued.insert(t).second) missing.push_back(t);
    }
    if (!missing.empty()) {
      auto got = embedder_(missing);
      if (got.size() != missing.size()) throw Error(ErrorKind::ProviderContract, "embedder returned wrong batch size");
      for (std::size_t i = 0; i < missing.size(); ++i) cache_.emplace(missing[i], std::move(got[i]));
    }
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) out.push_back(cache_.at(t));
    return out;
  }

  TextEmbedder embedder_;
  EmbeddingVector original_;
  std::unordered_map<std::string, EmbeddingVector> cache_;
};

enum class Termination { GenerationCap, FitnessFloor, EmptyPopulation };

inline std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::GenerationCap: return "generation-cap";
    case Termination::FitnessFloor: return "fitness-floor";
    case Termination::EmptyPopulation: return "empty-population";
  }
  return "unknown";
}

struct Evolution {
  Individual original;
  std::vector<Keyword> keywords;
  std::vector<std::vector<Individual>> generations;  // Pop_0 .. Pop_T
  Termination termination = Termination::GenerationCap;
};

inline double max_fitness(const std::vector<Individual>& pop) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& ind : pop) m = std::max(m, ind.fitness);
  return m;
}

/// Runs the genetic search. Generations are appended until there are
/// `max_generations` of them, or the newest one's best fitness is below the
/// similarity floor. Random draws come from one stream in a fixed order per
/// generation: selection, crossover pairs, mutations.
inline Evolution evolve(const std::string& text, const GaapConfig& config, const SubstitutionLexicon& lexicon,
                        const TextEmbedder& embedder, const KeywordExtractor& extractor = {}) {
  config.validate();
  Evolution ev;
  const TokenSequence seq = tokenize(text);
  auto root = original_lineage(seq);
  ev.original = make_individual(seq, root);
  FitnessEvaluator fitness(embedder, ev.original.text);
  ev.original.embedding = fitness.original();
  ev.original.fitness = 1.0;
  ev.keywords = select_keywords(seq, config.keyword_ratio, extractor);

  Rng rng = make_rng(config.seed, 0);
  auto pop = init_population(seq, ev.keywords, lexicon, root);
  auto embed_generation = [&](std::vector<Individual>& p) {
    try {
      fitness.evaluate(p);
    } catch (const Error& e) {
      throw Error(e.kind(), "generation " + std::to_string(ev.generations.size()) + ": " + e.message());
    }
  };
  if (pop.empty()) {
    ev.termination = Termination::EmptyPopulation;
    return ev;
  }
  embed_generation(pop);
  ev.generations.push_back(std::move(pop));

  for (;;) {
    const auto& current = ev.generations.back();
    if (max_fitness(current) < config.similarity_floor) {
      ev.termination = Termination::FitnessFloor;
      break;
    }
    if (static_cast<int>(ev.generations.size()) >= config.max_generations) {
      ev.termination = Termination::GenerationCap;
      break;
    }
    auto parents = roulette_select(current, static_cast<std::size_t>(config.selection_count), rng);

    std::vector<Individual> offspring;
    std::uniform_int_distribution<std::size_t> pick_parent(0, parents.size() - 1);
    const int max_pairs = 4 * config.offspring_count;
    for (int tries = 0; tries < max_pairs && static_cast<int>(offspring.size()) < config.offspring_count; ++tries) {
      const auto& a = parents[pick_parent(rng)];
      const auto& b = parents[pick_parent(rng)];
      std::size_t h = 0;
      auto kids = crossover(a.sequence, b.sequence, rng, &h);
      if (!kids) continue;
      for (int which = 0; which < 2 && static_cast<int>(offspring.size()) < config.offspring_count; ++which) {
        auto l = std::make_shared<Lineage>();
        l->kind = Lineage::Kind::Crossover;
        l->position = h;
        l->first_child = which == 0;
        l->parent = a.lineage;
        l->other_parent = b.lineage;
        offspring.push_back(make_individual(which == 0 ? kids->first : kids->second, l));
      }
    }

    std::vector<Individual> mutants;
    const auto& pool = offspring.empty() ? parents : offspring;
    std::uniform_int_distribution<std::size_t> pick_pool(0, pool.size() - 1);
    for (int k = 0; k < config.mutation_count; ++k) {
      bool changed = false;
      auto m = mutate(pool[pick_pool(rng)], lexicon, rng, &changed);
      if (changed) mutants.push_back(std::move(m));
    }

    std::vector<Individual> next = std::move(parents);
    for (auto& o : offspring) next.push_back(std::move(o));
    for (auto& m : mutants) next.push_back(std::move(m));
    detail::dedupe(next);
    embed_generation(next);
    ev.generations.push_back(std::move(next));
  }
  return ev;
}

struct Perturbation {
  std::string text;
  EmbeddingVector embedding;
  std::shared_ptr<const Lineage> lineage;
};

/// The original text at index 0 followed by exactly n perturbations.
struct PerturbationSet {
  std::vector<Perturbation> entries;

  std::size_t size() const { return entries.size(); }
  const Perturbation& original() const { return entries.front(); }
  std::vector<std::string> texts() const {
    std::vector<std::string> out;
    for (const auto& e : entries) out.push_back(e.text);
    return out;
  }
  std::vector<EmbeddingVector> embeddings() const {
    std::vector<EmbeddingVector> out;
    for (const auto& e : entries) out.push_back(e.embedding);
    return out;
  }
};

/// Draws round-robin from Pop_0, Pop_tau, Pop_2tau, ..., one uniform unused
/// text per visit, until n are chosen. With fewer distinct candidates than n,
/// random chosen ones are duplicated.
inline PerturbationSet build_perturbation_set(const Evolution& ev, const GaapConfig& config, Rng& rng) {
  config.validate();
  const std::size_t n = static_cast<std::size_t>(config.target_count);
  std::vector<std::vector<const Individual*>> pools;
  for (std::size_t g = 0; g < ev.generations.size(); g += static_cast<std::size_t>(config.sample_interval)) {
    std::vector<const Individual*> pool;
    for (const auto& ind : ev.generations[g]) {
      if (ind.text != ev.original.text) pool.push_back(&ind);
    }
    pools.push_back(std::move(pool));
  }
  std::set<std::string> used;
  std::vector<const Individual*> chosen;
  bool progress = true;
  while (chosen.size() < n && progress) {
    progress = false;
    for (auto& pool : pools) {
      if (chosen.size() >= n) break;
      std::erase_if(pool, [&](const Individual* i) { return used.count(i->text) > 0; });
      if (pool.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const Individual* ind = pool[pick(rng)];
      used.insert(ind->text);
      chosen.push_back(ind);
      progress = true;
    }
  }
  if (chosen.empty()) throw Error(ErrorKind::PerturbationFailure, "no perturbation candidates for: " + ev.original.text);
  if (chosen.size() < n) {
    const std::size_t unique = chosen.size();
    std::uniform_int_distribution<std::size_t> pick(0, unique - 1);
    while (chosen.size() < n) chosen.push_back(chosen[pick(rng)]);
  }
  PerturbationSet set;
  set.entries.push_back({ev.original.text, *ev.original.embedding, ev.original.lineage});
  for (const auto* ind : chosen) set.entries.push_back({ind->text, *ind->embedding, ind->lineage});
  return set;
}

/// evolve() followed by build_perturbation_set() on the stream after it.
inline PerturbationSet perturb(const std::string& text, const GaapConfig& config, const SubstitutionLexicon& lexicon,
                               const TextEmbedder& embedder, const KeywordExtractor& extractor = {}) {
  const Evolution ev = evolve(text, config, lexicon, embedder, extractor);
  Rng rng = make_rng(config.seed, 1);
  return build_perturbation_set(ev, config, rng);
}

}  // namespace invuq::gaap
