#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "invuq/random_walk.hpp"

using namespace invuq;
using Catch::Approx;

namespace {

TransitionMatrix uniform_walk(int states) {
  return TransitionMatrix(Eigen::MatrixXd::Constant(states, states, 1.0 / states));
}

TransitionMatrix identity_walk(int states) { return TransitionMatrix(Eigen::MatrixXd::Identity(states, states)); }

TransitionMatrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return TransitionMatrix(m);
}

TransitionMatrix random_walk_matrix(std::mt19937_64& rng, int states) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd a(states, states);
  for (int i = 0; i < states; ++i)
    for (int j = 0; j <= i; ++j) a(i, j) = a(j, i) = u(rng);
  a.diagonal().array() += 0.5;
  return row_normalize(AffinityMatrix(a));
}

}  // namespace

TEST_CASE("row_normalize examples", "[random_walk]") {
  const auto uniform = row_normalize(AffinityMatrix(Eigen::MatrixXd::Ones(3, 3)));
  CHECK((uniform.entries().array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);

  const auto half = row_normalize(dispersion_affinity(2, 0.5));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(half(i, j) == Approx(i == j ? 0.5 : 0.25).margin(1e-15));

  const auto ident = row_normalize(AffinityMatrix(Eigen::MatrixXd::Identity(3, 3)));
  CHECK(ident.entries() == Eigen::MatrixXd::Identity(3, 3));
}

TEST_CASE("row_normalize rejects a zero row", "[random_walk]") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 2);
  a(0, 0) = 1.0;
  try {
    row_normalize(AffinityMatrix(a));
    FAIL("expected degenerate-similarity");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateSimilarity);
  }
}

TEST_CASE("TransitionMatrix validates row sums", "[random_walk]") {
  Eigen::MatrixXd slightly_off = Eigen::MatrixXd::Constant(2, 2, 0.5);
  slightly_off(0, 0) += 1e-8;
  const TransitionMatrix repaired(slightly_off);
  CHECK(repaired.entries().row(0).sum() == Approx(1.0).margin(1e-15));
  Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(2, 2, 0.5);
  bad(0, 0) = 0.6;
  CHECK_THROWS_AS(TransitionMatrix(bad), Error);
}

TEST_CASE("marginal_y examples", "[random_walk]") {
  const auto u = marginal_y(uniform_walk(3)).probabilities();
  CHECK((u.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  const auto id = marginal_y(identity_walk(3)).probabilities();
  CHECK((id.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  const auto skew = marginal_y(rows({{1, 0, 0}, {1, 0, 0}, {0, 0, 1}})).probabilities();
  CHECK(skew(0) == Approx(2.0 / 3.0));
  CHECK(skew(1) == 0.0);
  CHECK(skew(2) == Approx(1.0 / 3.0));
}

TEST_CASE("conditional_x_given_y examples", "[random_walk]") {
  CHECK(conditional_x_given_y(identity_walk(3), identity_walk(3)).entries == Eigen::MatrixXd::Identity(3, 3));
  const auto u = conditional_x_given_y(uniform_walk(3), uniform_walk(3));
  CHECK((u.entries.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  const auto half = conditional_x_given_y(row_normalize(dispersion_affinity(2, 0.5)), row_normalize(dispersion_affinity(2, 0.5)));
  for (int i = 0; i < 3; ++i) CHECK(half.entries(i, i) == Approx(0.375).margin(1e-15));
  CHECK(half.orientation == Orientation::XGivenY);
}

TEST_CASE("marginal_x examples", "[random_walk]") {
  const auto a = marginal_x(identity_walk(3), identity_walk(3)).probabilities();
  CHECK((a.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  const auto b = marginal_x(uniform_walk(3), uniform_walk(3)).probabilities();
  CHECK((b.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  const auto c = marginal_x(identity_walk(3), rows({{1, 0, 0}, {1, 0, 0}, {0, 0, 1}})).probabilities();
  CHECK(c(0) == Approx(2.0 / 3.0));
  CHECK(c(1) == 0.0);
  CHECK(c(2) == Approx(1.0 / 3.0));
}

TEST_CASE("conditional_y_given_x examples", "[random_walk]") {
  CHECK(conditional_y_given_x(identity_walk(3), identity_walk(3)).entries.isApprox(Eigen::MatrixXd::Identity(3, 3)));
  const auto u = conditional_y_given_x(uniform_walk(3), uniform_walk(3));
  CHECK((u.entries.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
  const auto h = row_normalize(dispersion_affinity(2, 0.5));
  const auto half = conditional_y_given_x(h, h);
  for (int i = 0; i < 3; ++i) CHECK(half.entries(i, i) == Approx(0.375).margin(1e-15));
  CHECK(half.orientation == Orientation::YGivenX);
}

TEST_CASE("conditional_y_given_x rejects zero-mass states", "[random_walk]") {
  try {
    conditional_y_given_x(identity_walk(3), rows({{1, 0, 0}, {1, 0, 0}, {0, 0, 1}}));
    FAIL("expected undefined-conditional");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UndefinedConditional);
  }
}

TEST_CASE("closed_form_diagonal examples", "[random_walk]") {
  CHECK(closed_form_diagonal(2, 1.0, 1.0) == 1.0);
  CHECK(closed_form_diagonal(2, 0.0, 0.0) == Approx(1.0 / 3.0).margin(1e-15));
  CHECK(closed_form_diagonal(2, 0.5, 0.5) == 0.375);
  CHECK_THROWS_AS(closed_form_diagonal(0, 0.5, 0.5), Error);
}

TEST_CASE("matrix diagonal matches the closed form on the grid", "[random_walk][oracle]") {
  for (int n = 1; n <= 8; ++n) {
    for (int ex = 1; ex <= 10; ++ex) {
      for (int ey = 0; ey <= 10; ++ey) {
        const double eps_x = ex / 10.0, eps_y = ey / 10.0;
        const auto joint = conditional_x_given_y(row_normalize(dispersion_affinity(n, eps_y)),
                                                 row_normalize(dispersion_affinity(n, eps_x)));
        const double expected = closed_form_diagonal(n, eps_x, eps_y);
        for (int i = 0; i <= n; ++i) REQUIRE(std::abs(joint.entries(i, i) - expected) <= 1e-12);
      }
    }
  }
}

TEST_CASE("closed form increases with output dispersion", "[random_walk][property]") {
  // Forward differences on a fine grid.
  for (int n = 1; n <= 8; ++n) {
    for (int ex = 1; ex <= 10; ++ex) {
      const double eps_x = ex / 10.0;
      for (int k = 0; k < 100; ++k) {
        const double e0 = k / 100.0, e1 = (k + 1) / 100.0;
        REQUIRE(closed_form_diagonal(n, eps_x, e1) > closed_form_diagonal(n, eps_x, e0));
      }
    }
  }
}

TEST_CASE("products of stochastic matrices stay stochastic", "[random_walk][property]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int states = 1 + trial % 12;
    const auto joint = conditional_x_given_y(random_walk_matrix(rng, states), random_walk_matrix(rng, states));
    for (int j = 0; j < states; ++j) REQUIRE(std::abs(joint.entries.row(j).sum() - 1.0) <= 1e-9);
  }
}

TEST_CASE("Bayes inversion is consistent with the joint", "[random_walk][property]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int states = 2 + trial % 10;
    const auto p_y = random_walk_matrix(rng, states);
    const auto p_x = random_walk_matrix(rng, states);
    const auto fwd = conditional_x_given_y(p_y, p_x).entries;
    const auto inv = conditional_y_given_x(p_y, p_x).entries;
    const auto py = marginal_y(p_y).probabilities();
    for (int i = 0; i < states; ++i) {
      // Evidence for x_i computed independently from the forward joint.
      double evidence = 0.0;
      for (int j = 0; j < states; ++j) evidence += fwd(j, i) * py(j);
      REQUIRE(inv.row(i).sum() == Approx(1.0).margin(1e-12));
      for (int j = 0; j < states; ++j) {
        REQUIRE(inv(i, j) * evidence == Approx(fwd(j, i) * py(j)).margin(1e-12));
      }
    }
  }
}

TEST_CASE("Bayes evidence equals marginal_x when P(Y) is uniform", "[random_walk]") {
  std::mt19937_64 rng(6);
  // Symmetric affinities with equal row sums give doubly stochastic P_y.
  for (int n = 1; n <= 6; ++n) {
    const auto p_y = row_normalize(dispersion_affinity(n, 0.37));
    const auto p_x = random_walk_matrix(rng, n + 1);
    const auto fwd = conditional_x_given_y(p_y, p_x).entries;
    const Eigen::VectorXd evidence = fwd.transpose() * marginal_y(p_y).probabilities();
    CHECK((evidence - marginal_x(p_y, p_x).probabilities()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("relabeling states permutes every distribution", "[random_walk][property]") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int states = 2 + trial % 8;
    const auto p_y = random_walk_matrix(rng, states);
    const auto p_x = random_walk_matrix(rng, states);
    std::vector<int> perm(states);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> pm(Eigen::Map<Eigen::VectorXi>(perm.data(), states));
    const TransitionMatrix q_y(pm * p_y.entries() * pm.transpose());
    const TransitionMatrix q_x(pm * p_x.entries() * pm.transpose());
    CHECK((pm * marginal_y(p_y).probabilities() - marginal_y(q_y).probabilities()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((pm * marginal_x(p_y, p_x).probabilities() - marginal_x(q_y, q_x).probabilities()).cwiseAbs().maxCoeff() <
          1e-12);
    const Eigen::MatrixXd permuted = pm * conditional_y_given_x(p_y, p_x).entries * pm.transpose();
    CHECK((permuted - conditional_y_given_x(q_y, q_x).entries).cwiseAbs().maxCoeff() < 1e-12);
  }
}
