#include <cstdio>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "invuq/pipeline/run.hpp"
#include "invuq/tangent.hpp"

using namespace invuq;
using namespace invuq::pipeline;

namespace {

struct Options {
  std::string config;
  std::string dataset;
  std::string stage_dir = "invuq-run";
  std::optional<std::uint64_t> seed;
  std::vector<double> temperatures;
  std::vector<std::string> measures;
  std::string perturb_mode;
  std::string perturb_file;
  std::string stub;
  std::string lexicon;
  std::optional<std::size_t> max_items;
  std::optional<std::size_t> concurrency;

  // lemma-check
  std::vector<double> sigmas{0.1, 0.05, 0.025};
  std::size_t samples = 100000;
  double theta_degrees = 90.0;
};

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Config:
    case ErrorKind::InvalidInput:
    case ErrorKind::MissingArtifact:
      return 2;
    case ErrorKind::ProviderUnavailable:
    case ErrorKind::ProviderContract:
      return 3;
    default:
      return 1;
  }
}

RunConfig build_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.temperatures.empty()) c.temperatures = o.temperatures;
  if (!o.measures.empty()) {
    c.measures.clear();
    for (const auto& m : o.measures) c.measures.push_back(parse_measure(m));
  }
  if (!o.perturb_mode.empty()) c.perturb_mode = parse_perturb_mode(o.perturb_mode);
  if (!o.perturb_file.empty()) c.perturb_file = o.perturb_file;
  if (!o.lexicon.empty()) c.lexicon = o.lexicon;
  if (o.max_items) c.max_items = *o.max_items;
  if (o.concurrency) c.concurrency = *o.concurrency;
  if (!o.stub.empty()) {
    c.generation.stub = o.stub;
    if (!c.embedding.stub_explicit) c.embedding.stub = "hash-bucket";
  }
  c.validate();
  return c;
}

std::vector<DatasetItem> load_items(const Options& o, const RunConfig& c) {
  if (o.dataset.empty()) throw Error(ErrorKind::Config, "--dataset is required for this command");
  auto items = ingest_dataset(o.dataset);
  if (items.size() > c.max_items) items.resize(c.max_items);
  return items;
}

void print_result(const std::string& stage, const StageResult& r) {
  std::cerr << stage << ": " << r.ok << " ok, " << r.failed << " failed, " << r.skipped << " skipped\n";
}

std::string cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%12.6f", v);
  return buf;
}

int lemma_check(const Options& o, const fs::path& dir) {
  using tangent::VectorXd;
  std::ostringstream csv;
  csv << "field,sigma,empirical,predicted,gap\n";
  auto table = [&](const std::string& title, const std::vector<tangent::SweepRow>& rows) {
    std::cout << title << "\n       sigma    empirical    predicted          gap\n";
    for (const auto& r : rows) {
      std::cout << cell(r.sigma) << ' ' << cell(r.empirical) << ' ' << cell(r.predicted) << ' ' << cell(r.gap())
                << '\n';
      csv << title << ',' << providers::format_double(r.sigma) << ',' << providers::format_double(r.empirical) << ','
          << providers::format_double(r.predicted) << ',' << providers::format_double(r.gap()) << '\n';
    }
    std::cout << '\n';
  };
  const std::uint64_t seed = o.seed.value_or(0);
  const double theta = o.theta_degrees * std::numbers::pi / 180.0;
  const auto [fs_lin, fh_lin] = tangent::linear_pair(theta);
  table("linear", tangent::sigma_sweep(fs_lin, fh_lin, VectorXd::Zero(2), o.sigmas, o.samples, seed));

  // Gradient aligned at x0 with unit curvature: all of the gap is remainder.
  const VectorXd e1 = (VectorXd(2) << 1.0, 0.0).finished();
  const auto quad = tangent::quadratic_field(e1, tangent::MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  const auto rows = tangent::sigma_sweep(tangent::linear_field(e1), quad, VectorXd::Zero(2), o.sigmas, o.samples, seed);
  table("quadratic", rows);
  if (rows.size() >= 2) std::cout << "quadratic gap log-log slope: " << cell(tangent::log_log_slope(rows)) << "\n";

  const auto bowl = tangent::quadratic_bowl((VectorXd(2) << -1.0, -1.0).finished());
  table("bowl", tangent::sigma_sweep(tangent::linear_field(e1), bowl, VectorXd::Zero(2), o.sigmas, o.samples, seed));

  fs::create_directories(dir);
  write_text(dir / "lemma_check.csv", csv.str());
  std::cout << "wrote " << (dir / "lemma_check.csv").string() << "\n";
  return 0;
}

int run(const std::string& command, const Options& o) {
  const fs::path dir = o.stage_dir;
  if (command == "lemma-check") return lemma_check(o, dir);

  const RunConfig c = build_config(o);
  fs::create_directories(dir);
  if (command == "report") {
    report_stage(Stage{c, dir, {}, nullptr});
    std::cout << read_text(dir / "report.txt");
    return 0;
  }
  if (command == "evaluate") {
    const auto r = evaluate_stage(Stage{c, dir, {}, nullptr});
    print_result("evaluate", r);
    return r.partial() ? 4 : 0;
  }

  const auto items = load_items(o, c);
  const fs::path cache = c.cache_dir.empty() ? dir / "cache" : fs::path(c.cache_dir);
  Providers providers = make_providers(c, items, cache);
  const Stage st{c, dir, items, &providers};
  StageResult total;
  auto step = [&](const std::string& name, StageResult r) {
    print_result(name, r);
    r.raise();
    total += r;
  };
  if (command == "perturb") {
    step("perturb", perturb_stage(st));
  } else if (command == "generate") {
    for (double t : c.temperatures) step("generate " + temperature_tag(t), generate_stage(st, t));
    std::cerr << "generation requests: " << providers.caching->upstream_calls() << " sent, "
              << providers.caching->cache_hits() << " served from cache\n";
  } else if (command == "score") {
    for (double t : c.temperatures) step("score " + temperature_tag(t), score_stage(st, t));
  } else if (command == "tsu") {
    step("tsu", tsu_stage(st));
  }
  return total.partial() ? 4 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty quantification for language model answers via input perturbation"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--dataset", o.dataset, "JSONL dataset (id, question, answer[, category, choices])");
  app.add_option("--stage-dir", o.stage_dir, "Directory for stage artifacts")->capture_default_str();
  app.add_option("--seed", o.seed, "Run seed");
  app.add_option("--temperature", o.temperatures, "Sampling temperatures, comma separated")->delimiter(',');
  app.add_option("--measures", o.measures, "inv_entropy, nr_inv_entropy, ni_entropy, wd_px_py, max_py_x")
      ->delimiter(',');
  app.add_option("--perturb-mode", o.perturb_mode, "gaap, paraphrase or file");
  app.add_option("--perturb-file", o.perturb_file, "JSONL of fixed perturbations for --perturb-mode file");
  app.add_option("--stub", o.stub, "Offline generator: canned, roulette or echo");
  app.add_option("--lexicon", o.lexicon, "Substitution lexicon TSV for GAAP");
  app.add_option("--max-items", o.max_items, "Use at most this many dataset items");
  app.add_option("--concurrency", o.concurrency, "Items processed at once");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"perturb", "Build n perturbations per question"},
      {"generate", "Query the model r times per perturbation at each temperature"},
      {"score", "Compute the selected uncertainty measures"},
      {"evaluate", "AUROC, PRR and Brier with bootstrap spread"},
      {"tsu", "Generate and score at each TSU temperature, then report TSU"},
      {"lemma-check", "Tangent-variance check on synthetic fields"},
      {"report", "Summary tables and plot-ready CSVs"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help)->fallthrough();
    if (name == "lemma-check") {
      sub->add_option("--sigma", o.sigmas, "Perturbation scales")->delimiter(',')->capture_default_str();
      sub->add_option("--samples", o.samples, "Monte Carlo samples per scale")->capture_default_str();
      sub->add_option("--theta", o.theta_degrees, "Angle between the linear fields, degrees")->capture_default_str();
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
