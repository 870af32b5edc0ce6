// Scores one question offline: GAAP perturbations over a tiny lexicon, the
// roulette stub as the model, hashed embeddings.
#include <iostream>

#include "invuq/pipeline/run.hpp"

using namespace invuq;
using namespace invuq::pipeline;

int main() {
  const std::vector<DatasetItem> items = {
      {"demo", "Which city is the capital of France?", "Paris", "qa", {}},
  };
  gaap::SubstitutionLexicon lexicon;
  lexicon.add("city", gaap::Relation::Synonym, "town");
  lexicon.add("capital", gaap::Relation::Synonym, "seat of government");
  lexicon.add("France", gaap::Relation::Hypernym, "the French Republic");

  RunConfig config;
  config.generation.stub = "roulette";
  config.embedding.stub = "hash-bucket";
  config.seed = 3;

  Providers providers = make_providers(config, items, fs::temp_directory_path() / "invuq-example-cache");
  const auto report = run_uq(items, config, providers, lexicon);
  const auto& row = report.rows.front();
  if (row["status"] != "ok") {
    std::cerr << row["error"].get<std::string>() << "\n";
    return 1;
  }
  std::cout << "perturbations:\n";
  for (const auto& s : row["states"]) std::cout << "  " << s.get<std::string>() << "\n";
  std::cout << "answer: " << row["responses"][0][0].get<std::string>() << (row["correct"].get<bool>() ? " (correct)\n" : " (wrong)\n");
  for (const auto& [name, value] : row["measures"].items()) std::cout << name << " = " << value.get<double>() << "\n";
}
