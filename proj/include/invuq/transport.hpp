#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "invuq/error.hpp"

namespace invuq {

struct TransportSolution {
  double cost = 0.0;
  Eigen::MatrixXd plan;  // plan(i, j): mass moved from supply i to demand j
};

/// Exact discrete optimal transport between two nonnegative mass vectors of
/// equal total: successive shortest augmenting paths on the bipartite
/// residual graph, with Dijkstra over reduced costs. Sized for the tens of
/// states used here.
inline TransportSolution solve_transport(const Eigen::VectorXd& supply, const Eigen::VectorXd& demand,
                                         const Eigen::MatrixXd& cost) {
  const Eigen::Index m = supply.size();
  const Eigen::Index k = demand.size();
  if (cost.rows() != m || cost.cols() != k) throw Error(ErrorKind::InvalidInput, "transport: cost shape mismatch");
  if ((supply.array() < 0.0).any() || (demand.array() < 0.0).any()) {
    throw Error(ErrorKind::InvalidInput, "transport: masses must be nonnegative");
  }
  if (!cost.allFinite() || (cost.array() < 0.0).any()) {
    throw Error(ErrorKind::InvalidInput, "transport: costs must be finite and nonnegative");
  }
  const double total = supply.sum();
  if (std::abs(total - demand.sum()) > 1e-9 * std::max(1.0, total)) {
    throw Error(ErrorKind::Internal, "transport: infeasible (unequal total mass)");
  }
  const double mass_eps = 1e-14 * std::max(1.0, total);

  Eigen::VectorXd rem_a = supply;
  Eigen::VectorXd rem_b = demand;
  if (demand.sum() > 0.0) rem_b *= total / demand.sum();
  Eigen::MatrixXd flow = Eigen::MatrixXd::Zero(m, k);

  // Nodes: 0 = source, 1..m = supplies, m+1..m+k = demands, m+k+1 = sink.
  const Eigen::Index source = 0;
  const Eigen::Index sink = m + k + 1;
  const auto nodes = static_cast<std::size_t>(m + k + 2);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> potential(nodes, 0.0);
  std::vector<double> dist(nodes);
  std::vector<Eigen::Index> prev(nodes);
  std::vector<char> done(nodes);

  // Residual arc (u -> v) cost, or +inf when the arc has no capacity.
  auto arc_cost = [&](Eigen::Index u, Eigen::Index v) -> double {
    if (u == source) return (v >= 1 && v <= m && rem_a(v - 1) > mass_eps) ? 0.0 : inf;
    if (u >= 1 && u <= m) return (v > m && v < sink) ? cost(u - 1, v - 1 - m) : inf;
    if (u > m && u < sink) {
      if (v == sink) return rem_b(u - 1 - m) > mass_eps ? 0.0 : inf;
      if (v >= 1 && v <= m) return flow(v - 1, u - 1 - m) > mass_eps ? -cost(v - 1, u - 1 - m) : inf;
    }
    return inf;
  };

  const std::size_t max_rounds = 4 * nodes * nodes + 16;
  std::size_t rounds = 0;
  while (rem_a.sum() > mass_eps) {
    if (++rounds > max_rounds) throw Error(ErrorKind::Internal, "transport: augmentation did not converge");
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(prev.begin(), prev.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    dist[0] = 0.0;
    for (std::size_t iter = 0; iter < nodes; ++iter) {
      std::size_t u = nodes;
      for (std::size_t v = 0; v < nodes; ++v) {
        if (!done[v] && dist[v] < inf && (u == nodes || dist[v] < dist[u])) u = v;
      }
      if (u == nodes) break;
      done[u] = 1;
      for (std::size_t v = 0; v < nodes; ++v) {
        if (done[v]) continue;
        const double w = arc_cost(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
        if (w == inf) continue;
        // Reduced costs are nonnegative up to rounding.
        const double reduced = std::max(0.0, w + potential[u] - potential[v]);
        if (dist[u] + reduced < dist[v]) {
          dist[v] = dist[u] + reduced;
          prev[v] = static_cast<Eigen::Index>(u);
        }
      }
    }
    if (dist[static_cast<std::size_t>(sink)] == inf) {
      throw Error(ErrorKind::Internal, "transport: no augmenting path with mass remaining");
    }
    for (std::size_t v = 0; v < nodes; ++v) {
      if (dist[v] < inf) potential[v] += dist[v];
    }

    double delta = inf;
    for (Eigen::Index v = sink; v != source; v = prev[static_cast<std::size_t>(v)]) {
      const Eigen::Index u = prev[static_cast<std::size_t>(v)];
      if (u == source) {
        delta = std::min(delta, rem_a(v - 1));
      } else if (v == sink) {
        delta = std::min(delta, rem_b(u - 1 - m));
      } else if (u > m) {  // reverse arc demand -> supply
        delta = std::min(delta, flow(v - 1, u - 1 - m));
      }
    }
    for (Eigen::Index v = sink; v != source; v = prev[static_cast<std::size_t>(v)]) {
      const Eigen::Index u = prev[static_cast<std::size_t>(v)];
      if (u == source) {
        rem_a(v - 1) -= delta;
      } else if (v == sink) {
        rem_b(u - 1 - m) -= delta;
      } else if (u <= m) {
        flow(u - 1, v - 1 - m) += delta;
      } else {
        flow(v - 1, u - 1 - m) -= delta;
      }
    }
  }

  TransportSolution out;
  out.plan = flow.cwiseMax(0.0);
  out.cost = (out.plan.array() * cost.array()).sum();
  return out;
}

}  // namespace invuq
