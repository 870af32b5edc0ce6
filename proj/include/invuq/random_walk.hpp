#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "invuq/error.hpp"
#include "invuq/similarity.hpp"

namespace invuq {

/// Row sums within this of 1 are accepted (and renormalized).
inline constexpr double kStochasticTolerance = 1e-6;

/// Row-stochastic matrix over the state set {0..n}.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  explicit TransitionMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols() || entries_.rows() < 1) {
      throw Error(ErrorKind::InvalidInput, "transition matrix must be square and nonempty");
    }
    if (!entries_.allFinite() || (entries_.array() < 0.0).any()) {
      throw Error(ErrorKind::InvalidInput, "transition matrix entries must be finite and nonnegative");
    }
    for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
      const double s = entries_.row(i).sum();
      if (std::abs(s - 1.0) > kStochasticTolerance) {
        throw Error(ErrorKind::InvalidInput, "transition matrix row " + std::to_string(i) + " sums to " +
                                                 std::to_string(s));
      }
      entries_.row(i) /= s;
    }
  }

  const Eigen::MatrixXd& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  double operator()(std::size_t i, std::size_t j) const {
    return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }

 private:
  Eigen::MatrixXd entries_;
};

/// Probability vector over {0..n}.
class StateDistribution {
 public:
  StateDistribution() = default;

  explicit StateDistribution(Eigen::VectorXd p) : p_(std::move(p)) {
    if (p_.size() < 1 || !p_.allFinite() || (p_.array() < 0.0).any()) {
      throw Error(ErrorKind::InvalidInput, "distribution entries must be finite and nonnegative");
    }
    const double s = p_.sum();
    if (std::abs(s - 1.0) > kStochasticTolerance) {
      throw Error(ErrorKind::InvalidInput, "distribution sums to " + std::to_string(s));
    }
    p_ /= s;
  }

  const Eigen::VectorXd& probabilities() const noexcept { return p_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(p_.size()); }
  double operator[](std::size_t i) const { return p_(static_cast<Eigen::Index>(i)); }

 private:
  Eigen::VectorXd p_;
};

/// Rows are indexed by the conditioning state: for XGivenY, row j is
/// P(X = . | Y = y_j); for YGivenX, row i is P(Y = . | X = x_i).
enum class Orientation { XGivenY, YGivenX };

struct ConditionalMatrix {
  Eigen::MatrixXd entries;
  Orientation orientation = Orientation::XGivenY;

  std::size_t size() const noexcept { return static_cast<std::size_t>(entries.rows()); }
  Eigen::VectorXd diagonal() const { return entries.diagonal(); }
};

inline TransitionMatrix row_normalize(const AffinityMatrix& a) {
  Eigen::MatrixXd p = a.entries();
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double s = p.row(i).sum();
    if (!(s > 0.0)) {
      throw Error(ErrorKind::DegenerateSimilarity,
                  "state " + std::to_string(i) + " has zero total similarity (dissimilar to everything)");
    }
    p.row(i) /= s;
  }
  return TransitionMatrix(std::move(p));
}

namespace detail {
inline void require_conformable(const TransitionMatrix& a, const TransitionMatrix& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::InvalidInput, "transition matrices have different state counts (" +
                                             std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
}

inline Eigen::RowVectorXd uniform_row(Eigen::Index n) {
  return Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
}
}  // namespace detail

/// P(Y) = pi_uniform * P_y.
inline StateDistribution marginal_y(const TransitionMatrix& p_y) {
  const Eigen::MatrixXd& m = p_y.entries();
  return StateDistribution((detail::uniform_row(m.rows()) * m).transpose());
}

/// P(X | Y) = P_y * P_x; entry [j, i] is P(X = x_i | Y = y_j).
inline ConditionalMatrix conditional_x_given_y(const TransitionMatrix& p_y, const TransitionMatrix& p_x) {
  detail::require_conformable(p_y, p_x);
  return {p_y.entries() * p_x.entries(), Orientation::XGivenY};
}

/// P(X) = pi_uniform * P_y * P_x.
inline StateDistribution marginal_x(const TransitionMatrix& p_y, const TransitionMatrix& p_x) {
  detail::require_conformable(p_y, p_x);
  const Eigen::Index n = p_y.entries().rows();
  return StateDistribution((detail::uniform_row(n) * p_y.entries() * p_x.entries()).transpose());
}

/// Bayes inversion: P(Y = y_j | X = x_i) = P(x_i | y_j) P(y_j) / Z_i with
/// the evidence Z_i = sum_j P(x_i | y_j) P(y_j), so every row is a
/// distribution. Entry [i, j]. Every state must carry positive mass.
///
/// Z differs from marginal_x() (pi * P_y * P_x) unless pi * P_y is uniform;
/// marginal_x() keeps the one-step definition used by wd_px_py.
inline ConditionalMatrix conditional_y_given_x(const TransitionMatrix& p_y, const TransitionMatrix& p_x) {
  const ConditionalMatrix x_given_y = conditional_x_given_y(p_y, p_x);
  const Eigen::VectorXd py = marginal_y(p_y).probabilities();
  const Eigen::VectorXd evidence = x_given_y.entries.transpose() * py;
  const Eigen::Index n = evidence.size();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(evidence(i) > 0.0)) {
      throw Error(ErrorKind::UndefinedConditional, "P(X = x_" + std::to_string(i) + ") is zero");
    }
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = x_given_y.entries(j, i) * py(j) / evidence(i);
  }
  return {std::move(out), Orientation::YGivenX};
}

/// Diagonal of P_y(eps_y) P_x(eps_x) for the equicorrelated affinity
/// a(i,i) = 1, a(i,j) = 1 - eps. Used as an analytic oracle.
inline double closed_form_diagonal(int n, double eps_x, double eps_y) {
  if (n < 1) throw Error(ErrorKind::InvalidInput, "closed_form_diagonal: n must be >= 1");
  const double nn = static_cast<double>(n);
  const double num = 1.0 + nn - nn * eps_x - nn * eps_y + nn * eps_x * eps_y;
  return num / ((nn + 1.0 - nn * eps_x) * (nn + 1.0 - nn * eps_y));
}

/// Affinity with unit diagonal and 1 - eps off the diagonal over n + 1 states.
inline AffinityMatrix dispersion_affinity(int n, double eps) {
  if (n < 0) throw Error(ErrorKind::InvalidInput, "dispersion_affinity: n must be >= 0");
  if (eps < 0.0 || eps > 1.0) throw Error(ErrorKind::InvalidInput, "dispersion_affinity: eps outside [0, 1]");
  const Eigen::Index size = n + 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(size, size, 1.0 - eps);
  a.diagonal().setOnes();
  return AffinityMatrix(std::move(a));
}

}  // namespace invuq
