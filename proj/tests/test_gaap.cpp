#include <catch_amalgamated.hpp>

#include <map>
#include <sstream>

#include "invuq/gaap/engine.hpp"

using namespace invuq;
using namespace invuq::gaap;

namespace {

const std::string kGolfer =
    "Which golfer became only the fifth player in history to win all four major championships?";

SubstitutionLexicon golfer_lexicon() {
  std::istringstream in(
      "golfer\tsyn\tlinksman\n"
      "golfer\thyper\tmedalist\n"
      "golfer\thypo\tdriver\n"
      "championships\tsyn\ttitle\n"
      "championships\thyper\ttriple crown\n"
      "championships\thyper\thigh status\n"
      "win\tsyn\tgain\n"
      "player\tsyn\tparticipant\n"
      "history\tsyn\tpast\n"
      "major\tsyn\tprincipal\n");
  return SubstitutionLexicon::parse(in);
}

// Word-count vectors hashed into 64 buckets.
std::vector<EmbeddingVector> bow_embed(const std::vector<std::string>& texts) {
  std::vector<EmbeddingVector> out;
  for (const auto& t : texts) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(64);
    for (const auto& tok : tokenize(t)) v[static_cast<Eigen::Index>(fnv1a64(to_lower(tok)) % 64)] += 1.0;
    out.emplace_back(v);
  }
  return out;
}

std::vector<Individual> with_fitness(std::initializer_list<double> f) {
  std::vector<Individual> pop;
  int i = 0;
  for (double x : f) {
    auto ind = make_individual(TokenSequence({"w" + std::to_string(i++)}), nullptr);
    ind.fitness = x;
    pop.push_back(ind);
  }
  return pop;
}

}  // namespace

TEST_CASE("tokenize detaches edge punctuation and round-trips", "[gaap]") {
  const auto t = tokenize(kGolfer);
  CHECK(t.size() == 16);
  CHECK(t[14] == "championships");
  CHECK(t[15] == "?");
  CHECK(detokenize(t) == kGolfer);
  for (std::string s : {"Hello, (big) world.", "He said \"yes\" twice...", "U.S. costs $5, don't they?"}) {
    CHECK(detokenize(tokenize(s)) == s);
  }
  CHECK_THROWS_AS(tokenize("   "), Error);
  CHECK_THROWS_AS(TokenSequence({"a", ""}), Error);
}

TEST_CASE("keyword counts", "[gaap]") {
  CHECK(keyword_count(10, 0.3) == 3);
  CHECK(keyword_count(2, 0.1) == 1);
  CHECK(keyword_count(5, 1.0) == 5);
  CHECK_THROWS_AS(keyword_count(5, 0.0), Error);
  CHECK_THROWS_AS(keyword_count(5, 1.5), Error);
}

TEST_CASE("default extractor ranks rare content words first", "[gaap]") {
  const auto kws = select_keywords(tokenize(kGolfer), 0.2);
  REQUIRE(kws.size() == 3);
  std::set<std::string> top{kws[0].token, kws[1].token};
  CHECK(top == std::set<std::string>{"golfer", "championships"});
  for (const auto& k : kws) CHECK(gaap::detail::stopwords().count(to_lower(k.token)) == 0);
}

TEST_CASE("failing extractor falls back to the default ranking with a warning", "[gaap]") {
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  const auto seq = tokenize(kGolfer);
  const auto kws = select_keywords(seq, 0.2, [](const TokenSequence&) -> std::vector<std::size_t> {
    throw std::runtime_error("offline");
  });
  set_warning_sink(nullptr);
  CHECK(warnings.size() == 1);
  CHECK(kws == select_keywords(seq, 0.2));

  // A short extractor answer is completed from the default ranking.
  const auto partial = select_keywords(seq, 0.2, [](const TokenSequence&) { return std::vector<std::size_t>{5}; });
  CHECK(partial[0].token == "fifth");
  CHECK(partial.size() == 3);
}

TEST_CASE("lexicon parsing", "[gaap]") {
  const auto lex = golfer_lexicon();
  CHECK(lex.alternatives("Golfer") == std::vector<std::string>{"linksman", "medalist", "driver"});
  CHECK(lex.of("championships", Relation::Hypernym) == std::vector<std::string>{"triple_crown", "high_status"});
  CHECK(lex.alternatives("unknown").empty());

  std::istringstream self("cat\tsyn\tCat\n# comment\n\ncat\tsyn\tfeline\n");
  CHECK(SubstitutionLexicon::parse(self).alternatives("cat") == std::vector<std::string>{"feline"});

  std::istringstream bad("cat\tsyn\tfeline\ncat\tcousin\tlion\n");
  try {
    SubstitutionLexicon::parse(bad, "lex.tsv");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("lex.tsv:2") != std::string::npos);
  }
  std::istringstream short_line("cat\tsyn\n");
  CHECK_THROWS_AS(SubstitutionLexicon::parse(short_line), Error);
}

TEST_CASE("init population enumerates single edits", "[gaap]") {
  SubstitutionLexicon lex;
  lex.add("fast", Relation::Synonym, "quick");
  lex.add("fast", Relation::Synonym, "rapid");
  const auto seq = tokenize("a fast car");
  auto pop = init_population(seq, {{1, "fast"}}, lex);
  std::vector<std::string> texts;
  for (const auto& i : pop) texts.push_back(i.text);
  CHECK(texts == std::vector<std::string>{"a quick car", "a rapid car", "a car"});

  const auto golfer = tokenize(kGolfer);
  pop = init_population(golfer, {{14, "championships"}, {1, "golfer"}}, golfer_lexicon());
  CHECK(pop.size() == 8);
  std::set<std::string> all;
  for (const auto& i : pop) all.insert(i.text);
  CHECK(all.count("Which driver became only the fifth player in history to win all four major championships?"));
  CHECK(all.count("Which golfer became only the fifth player in history to win all four major triple crown?"));
  CHECK(all.count("Which golfer became only the fifth player in history to win all four major?"));

  // Each member differs from the original in exactly one keyword position.
  for (const auto& ind : pop) {
    const auto& l = *ind.lineage;
    CHECK((l.position == 14 || l.position == 1));
    if (l.kind == Lineage::Kind::Delete) {
      CHECK(ind.sequence == erase(golfer, l.position));
    } else {
      REQUIRE(ind.sequence.size() == golfer.size());
      int diffs = 0;
      for (std::size_t k = 0; k < golfer.size(); ++k) diffs += ind.sequence[k] != golfer[k];
      CHECK(diffs == 1);
      CHECK(ind.sequence[l.position] != golfer[l.position]);
    }
  }

  const auto empty = init_population(golfer, {{14, "championships"}, {1, "golfer"}}, SubstitutionLexicon{});
  CHECK(empty.size() == 2);
  CHECK(init_population(tokenize("alone"), {{0, "alone"}}, SubstitutionLexicon{}).empty());
  CHECK_THROWS_AS(init_population(golfer, {}, lex), Error);
}

TEST_CASE("roulette selection follows fitness proportions", "[gaap]") {
  Rng rng = make_rng(3, 0);
  const auto pop = with_fitness({0.9, 0.09, 0.01});
  const std::size_t draws = 100000;
  std::map<std::string, double> counts;
  for (const auto& ind : roulette_select(pop, draws, rng)) counts[ind.text] += 1.0;
  const double expect[] = {0.9, 0.09, 0.01};
  double chi2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double obs = counts["w" + std::to_string(i)];
    CHECK(std::abs(obs / draws - expect[i]) <= 0.01);
    chi2 += (obs - draws * expect[i]) * (obs - draws * expect[i]) / (draws * expect[i]);
  }
  CHECK(chi2 < 13.82);  // chi-square, 2 dof, p = 0.001

  counts.clear();
  for (const auto& ind : roulette_select(with_fitness({0.6, 0.4}), draws, rng)) counts[ind.text] += 1.0;
  CHECK(std::abs(counts["w0"] / draws - 0.6) <= 0.01);

  for (const auto& ind : roulette_select(with_fitness({0.3}), 50, rng)) CHECK(ind.text == "w0");
  for (const auto& ind : roulette_select(with_fitness({0.5, 0.0, 0.5}), 1000, rng)) CHECK(ind.text != "w1");

  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  counts.clear();
  for (const auto& ind : roulette_select(with_fitness({0.0, 0.0}), 10000, rng)) counts[ind.text] += 1.0;
  set_warning_sink(nullptr);
  CHECK(warnings.size() == 1);
  CHECK(std::abs(counts["w0"] / 10000 - 0.5) < 0.03);
}

TEST_CASE("crossover swaps suffixes and truncates to the shorter parent", "[gaap]") {
  const TokenSequence a({"a1", "a2", "a3", "a4"}), b({"b1", "b2", "b3", "b4"});
  auto [x, y] = crossover_at(a, b, 2);
  CHECK(x == TokenSequence({"a1", "a2", "b3", "b4"}));
  CHECK(y == TokenSequence({"b1", "b2", "a3", "a4"}));
  auto [s, t] = crossover_at(TokenSequence({"a1", "a2"}), TokenSequence({"b1", "b2"}), 1);
  CHECK(s == TokenSequence({"a1", "b2"}));
  CHECK(t == TokenSequence({"b1", "a2"}));
  const TokenSequence longer({"c1", "c2", "c3", "c4", "c5", "c6"});
  auto [u, v] = crossover_at(longer, a, 3);
  CHECK(u == TokenSequence({"c1", "c2", "c3", "a4"}));
  CHECK(v == TokenSequence({"a1", "a2", "a3", "c4"}));
  Rng rng = make_rng(1, 1);
  for (int k = 0; k < 50; ++k) {
    std::size_t h = 0;
    auto kids = crossover(longer, longer, rng, &h);
    REQUIRE(kids);
    CHECK((h >= 1 && h <= 5));
    CHECK(kids->first == longer);
  }
  CHECK_FALSE(crossover(TokenSequence({"x"}), a, rng));
  CHECK_THROWS_AS(crossover_at(a, b, 4), Error);
}

TEST_CASE("mutation edits exactly one position", "[gaap]") {
  Rng rng = make_rng(5, 0);
  SubstitutionLexicon lex;
  lex.add("cat", Relation::Synonym, "feline");
  auto one = make_individual(TokenSequence({"cat"}), original_lineage(TokenSequence({"cat"})));
  bool changed = false;
  auto m = mutate(one, lex, rng, &changed);
  CHECK(changed);
  CHECK(m.sequence == TokenSequence({"feline"}));

  const TokenSequence three({"t1", "t2", "t3"});
  auto base = make_individual(three, original_lineage(three));
  std::set<std::string> seen;
  for (int k = 0; k < 50; ++k) {
    auto d = mutate(base, SubstitutionLexicon{}, rng, &changed);
    CHECK(changed);
    CHECK(d.sequence.size() == 2);
    CHECK(d.lineage->deletion);
    CHECK(replay(*d.lineage) == d.sequence);
    seen.insert(d.text);
  }
  CHECK(seen.count("t1 t3"));
  CHECK(erase(three, 1) == TokenSequence({"t1", "t3"}));

  auto stuck = make_individual(TokenSequence({"solo"}), original_lineage(TokenSequence({"solo"})));
  auto same = mutate(stuck, SubstitutionLexicon{}, rng, &changed);
  CHECK_FALSE(changed);
  CHECK(same.text == "solo");

  Rng r1 = make_rng(9, 0), r2 = make_rng(9, 0);
  const auto golfer = tokenize(kGolfer);
  auto g = make_individual(golfer, original_lineage(golfer));
  CHECK(mutate(g, golfer_lexicon(), r1).text == mutate(g, golfer_lexicon(), r2).text);
}

TEST_CASE("evolve respects the generation cap and fitness floor", "[gaap]") {
  GaapConfig cfg;
  cfg.seed = 4;
  cfg.max_generations = 1;
  auto ev = evolve(kGolfer, cfg, golfer_lexicon(), bow_embed);
  CHECK(ev.generations.size() == 1);
  CHECK(ev.termination == Termination::GenerationCap);

  auto distant = [](const std::vector<std::string>& texts) {
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) out.push_back(t == kGolfer ? EmbeddingVector{1.0, 0.0} : EmbeddingVector{0.0, 1.0});
    return out;
  };
  cfg.max_generations = 5;
  ev = evolve(kGolfer, cfg, golfer_lexicon(), distant);
  CHECK(ev.generations.size() == 1);
  CHECK(ev.termination == Termination::FitnessFloor);

  cfg.max_generations = 5;
  ev = evolve(kGolfer, cfg, golfer_lexicon(), bow_embed);
  for (std::size_t g = 0; g + 1 < ev.generations.size(); ++g) CHECK(max_fitness(ev.generations[g]) >= cfg.similarity_floor);
  if (ev.termination == Termination::GenerationCap) {
    CHECK(ev.generations.size() == 5);
  } else {
    CHECK(ev.termination == Termination::FitnessFloor);
    CHECK(max_fitness(ev.generations.back()) < cfg.similarity_floor);
  }
  for (const auto& gen : ev.generations) {
    std::set<std::string> uniq;
    for (const auto& ind : gen) {
      CHECK(uniq.insert(ind.text).second);
      CHECK(ind.fitness == Catch::Approx(cosine_affinity(ev.original.embedding.value(), ind.embedding.value())));
    }
  }

  auto failing = [](const std::vector<std::string>&) -> std::vector<EmbeddingVector> {
    throw Error(ErrorKind::ProviderUnavailable, "down");
  };
  CHECK_THROWS_AS(evolve(kGolfer, cfg, golfer_lexicon(), failing), Error);
}

TEST_CASE("perturbation sets are exact-size, seeded, and replayable", "[gaap]") {
  GaapConfig cfg;
  cfg.seed = 21;
  const auto a = perturb(kGolfer, cfg, golfer_lexicon(), bow_embed);
  const auto b = perturb(kGolfer, cfg, golfer_lexicon(), bow_embed);
  CHECK(a.size() == 10);
  CHECK(a.texts() == b.texts());
  CHECK(a.original().text == kGolfer);
  for (const auto& e : a.entries) CHECK(detokenize(replay(*e.lineage)) == e.text);

  cfg.seed = 22;
  CHECK(perturb(kGolfer, cfg, golfer_lexicon(), bow_embed).size() == 10);

  // Too few distinct candidates: padded with duplicates.
  SubstitutionLexicon tiny;
  tiny.add("car", Relation::Synonym, "auto");
  cfg.max_generations = 1;
  cfg.keyword_ratio = 0.5;
  const auto padded = perturb("red car", cfg, tiny, bow_embed);
  CHECK(padded.size() == 10);
  std::set<std::string> distinct;
  for (std::size_t k = 1; k < padded.size(); ++k) distinct.insert(padded.entries[k].text);
  CHECK(distinct.size() < 9);
  CHECK(distinct.count("red car") == 0);

  CHECK_THROWS_AS(perturb("alone", cfg, SubstitutionLexicon{}, bow_embed), Error);
}

TEST_CASE("sampling visits generations at the configured interval", "[gaap]") {
  Evolution ev;
  ev.original = make_individual(TokenSequence({"orig"}), nullptr);
  ev.original.embedding = EmbeddingVector{1.0};
  for (int g = 0; g < 5; ++g) {
    std::vector<Individual> gen;
    for (int k = 0; k < 20; ++k) {
      auto ind = make_individual(TokenSequence({"g" + std::to_string(g) + "_" + std::to_string(k)}), nullptr);
      ind.embedding = EmbeddingVector{1.0};
      gen.push_back(ind);
    }
    ev.generations.push_back(gen);
  }
  GaapConfig cfg;
  cfg.sample_interval = 2;
  cfg.target_count = 9;
  Rng rng = make_rng(2, 0);
  const auto set = build_perturbation_set(ev, cfg, rng);
  REQUIRE(set.size() == 10);
  std::map<char, int> per_gen;
  std::set<std::string> distinct;
  for (std::size_t k = 1; k < set.size(); ++k) {
    per_gen[set.entries[k].text[1]]++;
    distinct.insert(set.entries[k].text);
  }
  CHECK(per_gen == std::map<char, int>{{'0', 3}, {'2', 3}, {'4', 3}});
  CHECK(distinct.size() == 9);

  Rng again = make_rng(2, 0);
  CHECK(build_perturbation_set(ev, cfg, again).texts() == set.texts());

  Evolution empty = ev;
  for (auto& g : empty.generations) g.clear();
  CHECK_THROWS_AS(build_perturbation_set(empty, cfg, rng), Error);
}
