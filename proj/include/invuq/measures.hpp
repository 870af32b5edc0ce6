#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "invuq/error.hpp"
#include "invuq/random_walk.hpp"
#include "invuq/rng.hpp"
#include "invuq/similarity.hpp"
#include "invuq/transport.hpp"

namespace invuq {

/// Uncertainty measures built on the dual random walk. MaxPyX is a
/// confidence; `uncertainty_orientation` reports the sign to apply.
enum class Measure { InvEntropy, NrInvEntropy, NiEntropy, WdPxPy, MaxPyX };

inline std::string_view measure_name(Measure m) {
  switch (m) {
    case Measure::InvEntropy: return "inv_entropy";
    case Measure::NrInvEntropy: return "nr_inv_entropy";
    case Measure::NiEntropy: return "ni_entropy";
    case Measure::WdPxPy: return "wd_px_py";
    case Measure::MaxPyX: return "max_py_x";
  }
  return "unknown";
}

inline Measure parse_measure(std::string_view name) {
  for (Measure m : {Measure::InvEntropy, Measure::NrInvEntropy, Measure::NiEntropy, Measure::WdPxPy,
                    Measure::MaxPyX}) {
    if (measure_name(m) == name) return m;
  }
  throw Error(ErrorKind::Config, "unknown measure '" + std::string(name) + "'");
}

/// +1 when larger values mean more uncertainty, -1 for confidences.
inline double uncertainty_orientation(Measure m) { return m == Measure::MaxPyX ? -1.0 : 1.0; }

/// -p log p with 0 log 0 = 0.
inline double entropy_term(double p) { return p > 0.0 ? -p * std::log(p) : 0.0; }

/// Unnormalized entropy of the diagonal of P_y P_x.
inline double inv_entropy(const TransitionMatrix& p_y, const TransitionMatrix& p_x) {
  const Eigen::VectorXd d = conditional_x_given_y(p_y, p_x).diagonal();
  double h = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) h += entropy_term(d(i));
  return h;
}

/// Same diagonal entropy, taken over the Bayes-inverted P(Y | X).
inline double ni_entropy(const TransitionMatrix& p_y, const TransitionMatrix& p_x) {
  const Eigen::VectorXd d = conditional_y_given_x(p_y, p_x).diagonal();
  double h = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) h += entropy_term(d(i));
  return h;
}

/// max_i P(y_i | x_i); a confidence score.
inline double max_py_x(const TransitionMatrix& p_y, const TransitionMatrix& p_x) {
  return conditional_y_given_x(p_y, p_x).diagonal().maxCoeff();
}

/// 1-Wasserstein distance between two distributions on the same states.
inline double wasserstein(const StateDistribution& p, const StateDistribution& q, const Eigen::MatrixXd& ground_cost) {
  if (p.size() != q.size() || ground_cost.rows() != static_cast<Eigen::Index>(p.size()) ||
      ground_cost.cols() != ground_cost.rows()) {
    throw Error(ErrorKind::InvalidInput, "wasserstein: shape mismatch");
  }
  return solve_transport(p.probabilities(), q.probabilities(), ground_cost).cost;
}

/// c(i,j) = 1 - (A_x[i,j] + A_y[i,j]) / 2, clamped to [0, 1], zero diagonal.
inline Eigen::MatrixXd default_ground_cost(const AffinityMatrix& a_x, const AffinityMatrix& a_y) {
  if (a_x.size() != a_y.size()) throw Error(ErrorKind::InvalidInput, "ground cost: affinity size mismatch");
  Eigen::MatrixXd c = (1.0 - 0.5 * (a_x.entries() + a_y.entries()).array()).cwiseMax(0.0).cwiseMin(1.0).matrix();
  c.diagonal().setZero();
  return c;
}

inline double wd_px_py(const TransitionMatrix& p_y, const TransitionMatrix& p_x, const Eigen::MatrixXd& ground_cost) {
  return wasserstein(marginal_x(p_y, p_x), marginal_y(p_y), ground_cost);
}

/// Input side of one analysis: the perturbed inputs' affinity and its walk.
struct InputWalk {
  AffinityMatrix affinity;
  TransitionMatrix transition;

  static InputWalk from_affinity(AffinityMatrix a) {
    TransitionMatrix p = row_normalize(a);
    return {std::move(a), std::move(p)};
  }
};

/// Evaluates one measure on a fixed pair of walks. `a_y` is needed only for
/// the default Wasserstein ground cost.
inline double evaluate_measure(Measure m, const InputWalk& input, const AffinityMatrix& a_y,
                               const TransitionMatrix& p_y, const Eigen::MatrixXd* ground_cost = nullptr) {
  switch (m) {
    case Measure::InvEntropy:
    case Measure::NrInvEntropy:
      return inv_entropy(p_y, input.transition);
    case Measure::NiEntropy:
      return ni_entropy(p_y, input.transition);
    case Measure::WdPxPy:
      return ground_cost ? wd_px_py(p_y, input.transition, *ground_cost)
                         : wd_px_py(p_y, input.transition, default_ground_cost(input.affinity, a_y));
    case Measure::MaxPyX:
      return max_py_x(p_y, input.transition);
  }
  throw Error(ErrorKind::Internal, "unhandled measure");
}

/// R_i for every state: r response embeddings per state, same r throughout.
class ReplicatedResponses {
 public:
  ReplicatedResponses() = default;

  explicit ReplicatedResponses(std::vector<std::vector<EmbeddingVector>> per_state)
      : per_state_(std::move(per_state)) {
    if (per_state_.empty()) throw Error(ErrorKind::InvalidInput, "responses: no states");
    replications_ = per_state_.front().size();
    if (replications_ < 1) throw Error(ErrorKind::InvalidInput, "responses: r must be >= 1");
    std::optional<std::size_t> dim;
    for (std::size_t i = 0; i < per_state_.size(); ++i) {
      if (per_state_[i].size() != replications_) {
        throw Error(ErrorKind::InvalidInput, "responses: state " + std::to_string(i) + " has " +
                                                 std::to_string(per_state_[i].size()) + " replications, expected " +
                                                 std::to_string(replications_));
      }
      for (const auto& v : per_state_[i]) {
        if (!dim) dim = v.dimension();
        if (v.dimension() != *dim) throw Error(ErrorKind::InvalidInput, "responses: inconsistent embedding dimension");
      }
    }
  }

  std::size_t states() const noexcept { return per_state_.size(); }
  std::size_t replications() const noexcept { return replications_; }
  const EmbeddingVector& at(std::size_t state, std::size_t replicate) const { return per_state_[state][replicate]; }
  std::size_t dimension() const { return per_state_.front().front().dimension(); }

 private:
  std::vector<std::vector<EmbeddingVector>> per_state_;
  std::size_t replications_ = 0;
};

struct BootstrapPlan {
  std::size_t resamples = 30;  // B
  std::uint64_t seed = 0;
};

struct MeasureResult {
  Measure measure = Measure::InvEntropy;
  double value = 0.0;  // mean of per_bootstrap
  std::vector<double> per_bootstrap;
};

using VectorScorer = std::function<double(const EmbeddingVector&, const EmbeddingVector&)>;

inline VectorScorer cosine_scorer() {
  return [](const EmbeddingVector& u, const EmbeddingVector& v) { return cosine_affinity(u, v); };
}

/// Indices y_i^(b) drawn for bootstrap b: one uniform draw from R_i per
/// state, in state order, from the substream (seed, b).
inline std::vector<std::size_t> bootstrap_draw(std::size_t states, std::size_t replications, std::uint64_t seed,
                                               std::size_t b) {
  Rng rng = make_rng(seed, b);
  std::uniform_int_distribution<std::size_t> pick(0, replications - 1);
  std::vector<std::size_t> out(states);
  for (auto& v : out) v = pick(rng);
  return out;
}

/// Computes several measures from the same bootstrap draws so comparisons
/// across measures are paired. Response-pair scores are evaluated once over
/// the pooled responses and reused by every resample.
inline std::map<Measure, MeasureResult> bootstrap_measures(const InputWalk& input, const ReplicatedResponses& responses,
                                                           const VectorScorer& scorer, const BootstrapPlan& plan,
                                                           std::span<const Measure> measures) {
  if (plan.resamples < 1) throw Error(ErrorKind::InvalidInput, "bootstrap: B must be >= 1");
  const std::size_t states = responses.states();
  if (states != input.affinity.size()) {
    throw Error(ErrorKind::InvalidInput, "bootstrap: " + std::to_string(states) + " response states vs " +
                                             std::to_string(input.affinity.size()) + " input states");
  }
  const std::size_t r = responses.replications();
  const std::size_t pooled = states * r;
  std::vector<EmbeddingVector> flat;
  flat.reserve(pooled);
  for (std::size_t i = 0; i < states; ++i) {
    for (std::size_t k = 0; k < r; ++k) flat.push_back(responses.at(i, k));
  }
  // Pairwise scores among pooled responses, symmetrized and checked once.
  const AffinityMatrix pooled_affinity =
      build_affinity_matrix_indexed(pooled, [&](std::size_t a, std::size_t b) { return scorer(flat[a], flat[b]); });

  std::map<Measure, MeasureResult> out;
  for (Measure m : measures) out[m] = MeasureResult{m, 0.0, std::vector<double>(plan.resamples)};

  Eigen::MatrixXd a_y(static_cast<Eigen::Index>(states), static_cast<Eigen::Index>(states));
  for (std::size_t b = 0; b < plan.resamples; ++b) {
    try {
      const auto pick = bootstrap_draw(states, r, plan.seed, b);
      for (std::size_t i = 0; i < states; ++i) {
        for (std::size_t j = 0; j < states; ++j) {
          a_y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              pooled_affinity(i * r + pick[i], j * r + pick[j]);
        }
      }
      const AffinityMatrix ay(a_y);
      const TransitionMatrix p_y = row_normalize(ay);
      for (Measure m : measures) out[m].per_bootstrap[b] = evaluate_measure(m, input, ay, p_y);
    } catch (const Error& e) {
      throw Error(e.kind(), "bootstrap " + std::to_string(b) + ": " + e.message());
    }
  }
  for (auto& [m, res] : out) {
    double s = 0.0;
    for (double v : res.per_bootstrap) s += v;
    res.value = s / static_cast<double>(res.per_bootstrap.size());
  }
  return out;
}

inline MeasureResult bootstrap_measure(const InputWalk& input, const ReplicatedResponses& responses,
                                       const VectorScorer& scorer, const BootstrapPlan& plan, Measure measure) {
  const Measure one[] = {measure};
  return bootstrap_measures(input, responses, scorer, plan, one).at(measure);
}

/// NR-Inv-Entropy: the r = 1, B = 1 configuration on the first response of
/// every state.
inline MeasureResult nr_inv_entropy(const InputWalk& input, const ReplicatedResponses& responses,
                                    const VectorScorer& scorer) {
  std::vector<std::vector<EmbeddingVector>> first(responses.states());
  for (std::size_t i = 0; i < responses.states(); ++i) first[i] = {responses.at(i, 0)};
  MeasureResult res =
      bootstrap_measure(input, ReplicatedResponses(std::move(first)), scorer, BootstrapPlan{1, 0}, Measure::InvEntropy);
  res.measure = Measure::NrInvEntropy;
  return res;
}

}  // namespace invuq
