#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "invuq/error.hpp"

namespace invuq {

/// Semantic embedding of one text. Entries are finite and the dimension is
/// at least one; consistency of dimension across a run is checked where
/// vectors meet (affinity construction, response ingestion).
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  explicit EmbeddingVector(Eigen::VectorXd values) : values_(std::move(values)) { validate(); }

  EmbeddingVector(std::initializer_list<double> values)
      : values_(Eigen::Map<const Eigen::VectorXd>(values.begin(), static_cast<Eigen::Index>(values.size()))) {
    validate();
  }

  explicit EmbeddingVector(std::span<const double> values)
      : values_(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))) {
    validate();
  }

  const Eigen::VectorXd& values() const noexcept { return values_; }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(values_.size()); }
  double norm() const { return values_.norm(); }
  bool is_zero() const { return values_.isZero(0.0); }

  friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

 private:
  void validate() const {
    if (values_.size() < 1) throw Error(ErrorKind::InvalidInput, "embedding must have dimension >= 1");
    if (!values_.allFinite()) throw Error(ErrorKind::InvalidInput, "embedding has non-finite entries");
  }

  Eigen::VectorXd values_;
};

inline void require_same_dimension(std::span<const EmbeddingVector> vectors) {
  if (vectors.empty()) return;
  const auto d = vectors.front().dimension();
  for (std::size_t i = 1; i < vectors.size(); ++i) {
    if (vectors[i].dimension() != d) {
      throw Error(ErrorKind::InvalidInput, "embedding " + std::to_string(i) + " has dimension " +
                                               std::to_string(vectors[i].dimension()) + ", expected " +
                                               std::to_string(d));
    }
  }
}

/// Nonnegative, finite, symmetric (n+1)x(n+1) similarity matrix.
class AffinityMatrix {
 public:
  AffinityMatrix() = default;

  explicit AffinityMatrix(Eigen::MatrixXd entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols() || entries_.rows() < 1) {
      throw Error(ErrorKind::InvalidInput, "affinity matrix must be square and nonempty");
    }
    if (!entries_.allFinite()) throw Error(ErrorKind::InvalidInput, "affinity matrix has non-finite entries");
    if ((entries_.array() < 0.0).any()) throw Error(ErrorKind::InvalidInput, "affinity matrix has negative entries");
    const double scale = std::max(1.0, entries_.cwiseAbs().maxCoeff());
    if ((entries_ - entries_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw Error(ErrorKind::InvalidInput, "affinity matrix is not symmetric");
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

/// (1 + cos(u, v)) / 2, in [0, 1].
inline double cosine_affinity(const EmbeddingVector& u, const EmbeddingVector& v) {
  if (u.dimension() != v.dimension()) throw Error(ErrorKind::InvalidInput, "cosine_affinity: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw Error(ErrorKind::InvalidInput, "cosine_affinity: zero-norm vector");
  double c = u.values().dot(v.values()) / (nu * nv);
  c = std::clamp(c, -1.0, 1.0);
  return (1.0 + c) / 2.0;
}

inline double symmetrize_score(double a_ij, double a_ji) { return (a_ij + a_ji) / 2.0; }

/// Scores above this magnitude below zero are provider errors, not rounding.
inline constexpr double kNegativeScoreTolerance = 1e-9;

namespace detail {
inline double checked_affinity(double v, std::size_t i, std::size_t j) {
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::ProviderContract,
                "non-finite similarity for pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  }
  if (v < 0.0) {
    if (v < -kNegativeScoreTolerance) {
      throw Error(ErrorKind::ProviderContract, "negative similarity " + std::to_string(v) + " for pair (" +
                                                   std::to_string(i) + ", " + std::to_string(j) + ")");
    }
    warn("clamping slightly negative similarity for pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    return 0.0;
  }
  return v;
}
}  // namespace detail

/// Builds A[i,j] = (score(i,j) + score(j,i)) / 2 for all pairs, diagonal
/// included. `score(i, j)` may be asymmetric (entailment-style scorers).
template <class PairScore>
AffinityMatrix build_affinity_matrix_indexed(std::size_t count, PairScore&& score) {
  if (count < 1) throw Error(ErrorKind::InvalidInput, "affinity matrix needs at least one item");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(count));
  auto call = [&](std::size_t i, std::size_t j) -> double {
    try {
      return static_cast<double>(score(i, j));
    } catch (const Error& e) {
      throw Error(e.kind(), "scoring pair (" + std::to_string(i) + ", " + std::to_string(j) + "): " + e.message());
    }
  };
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = i; j < count; ++j) {
      const double sij = call(i, j);
      const double sji = i == j ? sij : call(j, i);
      const double v = detail::checked_affinity(symmetrize_score(sij, sji), i, j);
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return AffinityMatrix(std::move(a));
}

template <class Scorer>
AffinityMatrix build_affinity_matrix(std::span<const EmbeddingVector> vectors, Scorer&& scorer) {
  if (vectors.size() < 2) throw Error(ErrorKind::InvalidInput, "affinity matrix needs at least two vectors");
  require_same_dimension(vectors);
  return build_affinity_matrix_indexed(vectors.size(),
                                       [&](std::size_t i, std::size_t j) { return scorer(vectors[i], vectors[j]); });
}

inline AffinityMatrix build_affinity_matrix(std::span<const EmbeddingVector> vectors) {
  return build_affinity_matrix(vectors, [](const EmbeddingVector& u, const EmbeddingVector& v) {
    return cosine_affinity(u, v);
  });
}

/// Rejects vectors that would make cosine affinities undefined.
inline void require_nonzero(std::span<const EmbeddingVector> vectors) {
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].is_zero()) throw Error(ErrorKind::InvalidInput, "embedding " + std::to_string(i) + " is all zeros");
  }
}

}  // namespace invuq
