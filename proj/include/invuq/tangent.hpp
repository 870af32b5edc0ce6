#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "invuq/error.hpp"
#include "invuq/rng.hpp"

namespace invuq::tangent {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ScalarField {
  std::string name;
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> gradient;
};

/// Largest relative deviation between the analytic gradient and central
/// differences at x.
inline double gradient_check(const ScalarField& f, const VectorXd& x, double h = 1e-6) {
  const VectorXd g = f.gradient(x);
  VectorXd fd(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd lo = x, hi = x;
    lo[i] -= h;
    hi[i] += h;
    fd[i] = (f.value(hi) - f.value(lo)) / (2.0 * h);
  }
  return (g - fd).norm() / std::max(g.norm(), 1.0);
}

/// Orthogonal projector onto the hyperplane normal to grad.
inline MatrixXd tangent_projector(const VectorXd& grad) {
  const double sq = grad.squaredNorm();
  if (!(sq > 0.0) || !std::isfinite(sq)) throw Error(ErrorKind::AssumptionViolation, "tangent_projector: zero gradient");
  const Eigen::Index d = grad.size();
  return MatrixXd::Identity(d, d) - grad * grad.transpose() / sq;
}

struct TangentProbe {
  VectorXd x0;
  double sigma = 0.1;
  std::size_t samples = 100000;
  std::uint64_t seed = 0;
};

struct VarianceRatio {
  double empirical = 0.0;
  double predicted = 0.0;
};

inline constexpr std::size_t kChunkSize = 4096;

/// Empirical: unbiased sample variance of f_hat(x0 + P z), z ~ N(0, sigma^2 I),
/// divided by sigma^2. Predicted: |grad f_hat|^2 sin^2 of the angle between
/// the two gradients at x0. Draws come in fixed-size chunks, each from its
/// own substream, so a given seed reuses the same unit normals across sigma.
inline VarianceRatio variance_ratio(const ScalarField& f_star, const ScalarField& f_hat, const TangentProbe& probe) {
  if (probe.samples < 2) throw Error(ErrorKind::InvalidInput, "variance_ratio: need at least 2 samples");
  if (!(probe.sigma > 0.0)) throw Error(ErrorKind::InvalidInput, "variance_ratio: sigma must be > 0");
  const VectorXd g_star = f_star.gradient(probe.x0);
  const VectorXd g_hat = f_hat.gradient(probe.x0);
  if (!(g_hat.squaredNorm() > 0.0)) throw Error(ErrorKind::AssumptionViolation, "variance_ratio: zero model gradient");
  const MatrixXd p = tangent_projector(g_star);

  VarianceRatio out;
  out.predicted = (p * g_hat).squaredNorm();

  std::vector<double> values(probe.samples);
  const Eigen::Index d = probe.x0.size();
  VectorXd z(d);
  for (std::size_t start = 0, chunk = 0; start < probe.samples; start += kChunkSize, ++chunk) {
    Rng rng = make_rng(probe.seed, chunk);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t end = std::min(probe.samples, start + kChunkSize);
    for (std::size_t s = start; s < end; ++s) {
      for (Eigen::Index i = 0; i < d; ++i) z[i] = probe.sigma * normal(rng);
      values[s] = f_hat.value(probe.x0 + p * z);
    }
  }
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  out.empirical = ss / static_cast<double>(values.size() - 1) / (probe.sigma * probe.sigma);
  return out;
}

/// f(x) = w . x
inline ScalarField linear_field(VectorXd w, std::string name = "linear") {
  return {std::move(name), [w](const VectorXd& x) { return w.dot(x); }, [w](const VectorXd&) { return w; }};
}

/// (f_star, f_hat) in R^d with unit gradients e1 and cos(theta) e1 + sin(theta) e2.
inline std::pair<ScalarField, ScalarField> linear_pair(double theta, Eigen::Index d = 2) {
  if (d < 2) throw Error(ErrorKind::InvalidInput, "linear_pair needs d >= 2");
  VectorXd a = VectorXd::Zero(d), b = VectorXd::Zero(d);
  a[0] = 1.0;
  b[0] = std::cos(theta);
  b[1] = std::sin(theta);
  return {linear_field(a, "f_star"), linear_field(b, "f_hat")};
}

/// f(x) = b . x + (x - c)' H (x - c) / 2, H symmetric.
inline ScalarField quadratic_field(VectorXd b, MatrixXd h, VectorXd c, std::string name = "quadratic") {
  return {std::move(name),
          [b, h, c](const VectorXd& x) {
            const VectorXd u = x - c;
            return b.dot(x) + 0.5 * u.dot(h * u);
          },
          [b, h, c](const VectorXd& x) -> VectorXd { return b + h * (x - c); }};
}

inline ScalarField quadratic_bowl(VectorXd center, double curvature = 1.0) {
  const Eigen::Index d = center.size();
  return quadratic_field(VectorXd::Zero(d), curvature * MatrixXd::Identity(d, d), std::move(center), "bowl");
}

/// f(x) = w . x + amplitude * sin(k . x)
inline ScalarField sinusoid_linear_field(VectorXd w, VectorXd k, double amplitude) {
  return {"sinusoid",
          [w, k, amplitude](const VectorXd& x) { return w.dot(x) + amplitude * std::sin(k.dot(x)); },
          [w, k, amplitude](const VectorXd& x) -> VectorXd { return w + amplitude * std::cos(k.dot(x)) * k; }};
}

struct SweepRow {
  double sigma = 0.0;
  double empirical = 0.0;
  double predicted = 0.0;
  double gap() const { return std::abs(empirical - predicted); }
};

inline std::vector<SweepRow> sigma_sweep(const ScalarField& f_star, const ScalarField& f_hat, const VectorXd& x0,
                                         const std::vector<double>& sigmas, std::size_t samples, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  for (double sigma : sigmas) {
    const auto r = variance_ratio(f_star, f_hat, {x0, sigma, samples, seed});
    rows.push_back({sigma, r.empirical, r.predicted});
  }
  return rows;
}

/// Least-squares slope of log(gap) against log(sigma); rows with zero gap
/// are rejected.
inline double log_log_slope(const std::vector<SweepRow>& rows) {
  if (rows.size() < 2) throw Error(ErrorKind::InvalidInput, "log_log_slope needs >= 2 rows");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : rows) {
    if (!(r.gap() > 0.0)) throw Error(ErrorKind::InvalidInput, "log_log_slope: zero gap");
    const double x = std::log(r.sigma), y = std::log(r.gap());
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(rows.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace invuq::tangent
