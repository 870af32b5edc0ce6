#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "invuq/error.hpp"
#include "invuq/rng.hpp"

namespace invuq::eval {

/// One question's uncertainty score and whether its answer was judged
/// correct. Confidence is the negated score.
struct EvalRecord {
  std::string id;
  double uncertainty = 0.0;
  bool correct = false;

  double confidence() const { return -uncertainty; }
};

namespace detail {

inline void require_both_classes(std::span<const EvalRecord> records, const char* metric) {
  std::size_t pos = 0;
  for (const auto& r : records) {
    if (!std::isfinite(r.uncertainty)) throw Error(ErrorKind::InvalidInput, std::string(metric) + ": non-finite score");
    pos += r.correct ? 1 : 0;
  }
  if (pos == 0 || pos == records.size()) {
    throw Error(ErrorKind::UndefinedMetric, std::string(metric) + " needs both correct and incorrect records");
  }
}

}  // namespace detail

/// Probability that a random (correct, incorrect) pair is ordered correctly
/// by confidence; ties score 1/2. Computed from midranks (Mann-Whitney U).
inline double auroc(std::span<const EvalRecord> records) {
  detail::require_both_classes(records, "auroc");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].confidence() < records[b].confidence(); });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && records[order[j]].confidence() == records[order[i]].confidence()) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (records[order[k]].correct) {
        rank_sum += midrank;
        n_pos += 1.0;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(records.size()) - n_pos;
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// Rejection curves, each sampled at k = 0..N rejected records. Entry k is
/// the number of errors left among retained records divided by N, so
/// rejected records count as handled.
struct RejectionCurves {
  std::vector<double> uncertainty;  // most-uncertain-first, ties averaged
  std::vector<double> random;       // expectation under random order
  std::vector<double> oracle;       // incorrect records rejected first
};

namespace detail {

// Expected number of incorrect records still retained after rejecting the k
// most uncertain, k = 0..N. Within a tie group every order is equally
// likely, so the count falls linearly across the group.
inline std::vector<double> retained_errors(std::span<const EvalRecord> records) {
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].uncertainty > records[b].uncertainty; });
  double remaining = 0.0;
  for (const auto& r : records) remaining += r.correct ? 0.0 : 1.0;
  std::vector<double> out(n + 1, 0.0);
  out[0] = remaining;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double group_errors = 0.0;
    while (j < n && records[order[j]].uncertainty == records[order[i]].uncertainty) {
      group_errors += records[order[j]].correct ? 0.0 : 1.0;
      ++j;
    }
    const double g = static_cast<double>(j - i);
    for (std::size_t step = 1; step <= j - i; ++step) {
      out[++k] = remaining - static_cast<double>(step) * group_errors / g;
    }
    remaining -= group_errors;
    i = j;
  }
  out[n] = 0.0;
  return out;
}

}  // namespace detail

inline RejectionCurves rejection_curves(std::span<const EvalRecord> records) {
  const std::size_t n = records.size();
  const double nn = static_cast<double>(n);
  RejectionCurves c;
  c.uncertainty = detail::retained_errors(records);
  const double errors = c.uncertainty[0];
  c.random.assign(n + 1, 0.0);
  c.oracle.assign(n + 1, 0.0);
  for (std::size_t r = 0; r <= n; ++r) {
    c.uncertainty[r] /= nn;
    c.random[r] = errors * (nn - static_cast<double>(r)) / (nn * nn);
    c.oracle[r] = std::max(errors - static_cast<double>(r), 0.0) / nn;
  }
  return c;
}

/// Prediction rejection ratio (AUC_random - AUC_uq) / (AUC_random - AUC_oracle)
/// over the curves above. 1 for oracle-consistent scores, 0 for random.
/// Areas are taken in error-count units (scaled by 2N^2), where the random
/// and oracle areas are the integers eN and e^2.
inline double prr(std::span<const EvalRecord> records) {
  detail::require_both_classes(records, "prr");
  const std::vector<double> retained = detail::retained_errors(records);
  double uq = 0.0;
  for (std::size_t k = 0; k + 1 < retained.size(); ++k) uq += retained[k] + retained[k + 1];
  const double errors = retained.front();
  const double random = errors * static_cast<double>(records.size());
  const double oracle = errors * errors;
  if (!(random > oracle)) throw Error(ErrorKind::UndefinedMetric, "prr: zero oracle area");
  return (random - uq) / (random - oracle);
}

/// Stepwise non-decreasing map from confidence to P(correct).
struct IsotonicModel {
  std::vector<double> breakpoints;  // lowest confidence of each block, increasing
  std::vector<double> values;       // fitted value of each block, non-decreasing
};

/// Pool-adjacent-violators fit of y in [0, 1] against x; equal x values are
/// pooled first.
inline IsotonicModel isotonic_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::InvalidInput, "isotonic_fit needs >= 2 points");
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  struct Block {
    double lo, sum, weight;
  };
  std::vector<Block> blocks;
  for (std::size_t idx : order) {
    if (!blocks.empty() && x[idx] == blocks.back().lo) {
      blocks.back().sum += y[idx];
      blocks.back().weight += 1.0;
    } else {
      blocks.push_back({x[idx], y[idx], 1.0});
    }
    while (blocks.size() >= 2) {
      const Block& b = blocks.back();
      const Block& a = blocks[blocks.size() - 2];
      if (a.sum / a.weight <= b.sum / b.weight) break;
      Block merged{a.lo, a.sum + b.sum, a.weight + b.weight};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  IsotonicModel m;
  for (const auto& b : blocks) {
    m.breakpoints.push_back(b.lo);
    m.values.push_back(std::clamp(b.sum / b.weight, 0.0, 1.0));
  }
  return m;
}

inline IsotonicModel isotonic_fit(std::span<const EvalRecord> records) {
  std::vector<double> x, y;
  for (const auto& r : records) {
    x.push_back(r.confidence());
    y.push_back(r.correct ? 1.0 : 0.0);
  }
  return isotonic_fit(x, y);
}

/// Value of the last block starting at or below `confidence`; flat beyond
/// both ends.
inline double isotonic_apply(const IsotonicModel& model, double confidence) {
  if (model.values.empty()) throw Error(ErrorKind::InvalidInput, "isotonic_apply: empty model");
  const auto it = std::upper_bound(model.breakpoints.begin(), model.breakpoints.end(), confidence);
  if (it == model.breakpoints.begin()) return model.values.front();
  return model.values[static_cast<std::size_t>(it - model.breakpoints.begin()) - 1];
}

inline double brier(std::span<const EvalRecord> records, const IsotonicModel& model) {
  if (records.empty()) throw Error(ErrorKind::InvalidInput, "brier: no records");
  double s = 0.0;
  for (const auto& r : records) {
    const double d = isotonic_apply(model, r.confidence()) - (r.correct ? 1.0 : 0.0);
    s += d * d;
  }
  return s / static_cast<double>(records.size());
}

/// Brier score with the isotonic map fitted on the same records.
inline double brier(std::span<const EvalRecord> records) { return brier(records, isotonic_fit(records)); }

/// Uncertainty of one question at several sampling temperatures.
struct TemperatureSeries {
  std::string id;
  std::map<double, double> uq_by_temperature;
};

inline constexpr double kTemperatureMatchTolerance = 1e-9;

namespace detail {
inline const double* find_temperature(const TemperatureSeries& s, double t) {
  auto it = s.uq_by_temperature.lower_bound(t - kTemperatureMatchTolerance);
  if (it != s.uq_by_temperature.end() && std::abs(it->first - t) <= kTemperatureMatchTolerance) return &it->second;
  return nullptr;
}
}  // namespace detail

/// Fraction of questions whose uncertainty strictly increases across the
/// given increasing temperatures.
inline double tsu(std::span<const TemperatureSeries> series, std::span<const double> temperatures) {
  if (temperatures.size() < 2) throw Error(ErrorKind::InvalidInput, "tsu needs at least two temperatures");
  for (std::size_t k = 1; k < temperatures.size(); ++k) {
    if (!(temperatures[k] > temperatures[k - 1])) {
      throw Error(ErrorKind::InvalidInput, "tsu temperatures must be strictly increasing");
    }
  }
  if (series.empty()) throw Error(ErrorKind::UndefinedMetric, "tsu over an empty dataset");
  std::vector<std::string> incomplete;
  std::size_t increasing = 0;
  for (const auto& s : series) {
    bool ok = true;
    bool complete = true;
    double previous = 0.0;
    for (std::size_t k = 0; k < temperatures.size(); ++k) {
      const double* v = detail::find_temperature(s, temperatures[k]);
      if (!v) {
        complete = false;
        break;
      }
      if (k > 0 && !(*v > previous)) ok = false;
      previous = *v;
    }
    if (!complete) {
      incomplete.push_back(s.id);
      continue;
    }
    increasing += ok ? 1 : 0;
  }
  if (!incomplete.empty()) {
    std::string ids;
    for (const auto& id : incomplete) ids += (ids.empty() ? "" : ", ") + id;
    throw Error(ErrorKind::IncompleteSeries, "missing temperatures for: " + ids);
  }
  return static_cast<double>(increasing) / static_cast<double>(series.size());
}

/// A named ordered subset of temperatures to report TSU over.
struct TemperatureSubset {
  std::string label;
  std::vector<double> temperatures;
};

inline std::string format_temperature(double t) {
  std::string s = std::to_string(t);
  while (s.size() > 1 && s.back() == '0') s.pop_back();
  if (!s.empty() && s.back() == '.') s.push_back('0');
  return s;
}

/// All pairs (by increasing gap) followed by every contiguous run of three
/// or more temperatures, labelled TSU(a,b) and TSU(a-c).
inline std::vector<TemperatureSubset> default_tsu_subsets(std::vector<double> temperatures) {
  std::sort(temperatures.begin(), temperatures.end());
  std::vector<TemperatureSubset> out;
  const std::size_t k = temperatures.size();
  for (std::size_t gap = 1; gap < k; ++gap) {
    for (std::size_t i = 0; i + gap < k; ++i) {
      out.push_back({"TSU(" + format_temperature(temperatures[i]) + "," + format_temperature(temperatures[i + gap]) + ")",
                     {temperatures[i], temperatures[i + gap]}});
    }
  }
  for (std::size_t len = 3; len <= k; ++len) {
    for (std::size_t i = 0; i + len <= k; ++i) {
      out.push_back({"TSU(" + format_temperature(temperatures[i]) + "-" +
                         format_temperature(temperatures[i + len - 1]) + ")",
                     std::vector<double>(temperatures.begin() + static_cast<std::ptrdiff_t>(i),
                                         temperatures.begin() + static_cast<std::ptrdiff_t>(i + len))});
    }
  }
  return out;
}

struct BootstrapStatistic {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> samples;
};

using Metric = std::function<double(std::span<const EvalRecord>)>;

/// Mean and (population) standard deviation of `metric` over `resamples`
/// with-replacement resamples. Resamples on which the metric is undefined
/// are redrawn from the same substream, up to a bounded number of attempts.
inline BootstrapStatistic bootstrap_statistic(std::span<const EvalRecord> records, const Metric& metric,
                                              std::size_t resamples = 40, std::uint64_t seed = 0) {
  if (records.empty()) throw Error(ErrorKind::InvalidInput, "bootstrap_statistic: no records");
  if (resamples < 1) throw Error(ErrorKind::InvalidInput, "bootstrap_statistic: resamples must be >= 1");
  constexpr int kMaxAttempts = 100;
  BootstrapStatistic out;
  std::vector<EvalRecord> sample(records.size());
  for (std::size_t s = 0; s < resamples; ++s) {
    Rng rng = make_rng(seed, s);
    std::uniform_int_distribution<std::size_t> pick(0, records.size() - 1);
    bool done = false;
    for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
      for (auto& r : sample) r = records[pick(rng)];
      try {
        out.samples.push_back(metric(sample));
        done = true;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UndefinedMetric) throw;
      }
    }
    if (!done) {
      throw Error(ErrorKind::UnstableMetric,
                  "metric undefined on " + std::to_string(kMaxAttempts) + " draws for resample " + std::to_string(s));
    }
  }
  const double n = static_cast<double>(out.samples.size());
  out.mean = std::accumulate(out.samples.begin(), out.samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : out.samples) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / n);
  return out;
}

}  // namespace invuq::eval
