#include "oracles.hpp"

#include "unifier/graph.hpp"

#include <gtest/gtest.h>

using namespace unifier;

namespace {

// Distances from sample `self` to all samples, with self's entry removed.
Vector others(const Vector& b, Index self) {
  Vector out(b.size() - 1);
  for (Index j = 0, t = 0; j < b.size(); ++j)
    if (j != self) out(t++) = b(j);
  return out;
}

Vector dense_row(const NeighborRow& row, Index n) {
  Vector s = Vector::Zero(n);
  for (std::size_t t = 0; t < row.neighbors.size(); ++t) s(row.neighbors[t]) = row.weights[t];
  return s;
}

}  // namespace

TEST(SimilarityRow, MatchesBruteForceSimplexQP) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix Y = oracle::random_matrix(rng, 10, 3);
    const Matrix B = half_squared_distances(Y);
    const Index self = trial % 10;
    for (int k : {1, 2, 3, 5}) {
      const Vector b = B.row(self).transpose();
      const auto row = similarity_row(b, self, k);
      ASSERT_FALSE(row.degenerate);
      const Vector s = others(dense_row(row, 10), self);
      const auto best = oracle::simplex_qp_bruteforce(others(b, self), row.xi);
      EXPECT_NEAR((s - best.s).cwiseAbs().maxCoeff(), 0.0, 1e-8);
      EXPECT_NEAR(b.dot(dense_row(row, 10)) + row.xi * s.squaredNorm(), best.value, 1e-8);
      EXPECT_EQ((s.array() > 0.0).count(), k);
      EXPECT_NEAR(s.sum(), 1.0, 1e-12);
    }
  }
}

TEST(SimilarityRow, XiIsTheLargestValueKeepingKNeighbours) {
  std::mt19937_64 rng(11);
  const Matrix B = half_squared_distances(oracle::random_matrix(rng, 12, 4));
  const Vector b = B.row(0).transpose();
  for (int k : {2, 4}) {
    const auto row = similarity_row(b, 0, k);
    const auto above = oracle::simplex_qp_bruteforce(others(b, 0), row.xi * 1.01);
    const auto below = oracle::simplex_qp_bruteforce(others(b, 0), row.xi * 0.99);
    EXPECT_EQ((above.s.array() > 1e-12).count(), k + 1);
    EXPECT_EQ((below.s.array() > 1e-12).count(), k);
  }
}

TEST(SimilarityRow, TiesBrokenByIndexAndSelfExcludedByIndex) {
  // Sample 0 duplicates sample 3; samples 1 and 2 are equidistant.
  Matrix Y(5, 1);
  Y << 0.0, 1.0, -1.0, 0.0, 5.0;
  const Matrix B = half_squared_distances(Y);
  const auto row = similarity_row(B.row(0).transpose(), 0, 2);
  EXPECT_EQ(row.neighbors, (IndexList{3, 1}));
  const auto row3 = similarity_row(B.row(3).transpose(), 3, 1);
  EXPECT_EQ(row3.neighbors, (IndexList{0}));
  EXPECT_DOUBLE_EQ(row3.weights[0], 1.0);
}

TEST(SimilarityRow, TwoSamplesWithOneNeighbourPointAtEachOther) {
  Matrix Y(2, 2);
  Y << 0.0, 0.0, 3.0, 4.0;
  const auto g = similarity_from_distances(half_squared_distances(Y), 1);
  Matrix expected(2, 2);
  expected << 0.0, 1.0, 1.0, 0.0;
  EXPECT_EQ(g.S, expected);
  EXPECT_EQ(g.xi, Vector::Zero(2));
}

TEST(SimilarityRow, EquidistantNeighboursGiveUniformWeights) {
  Matrix B = Matrix::Ones(6, 6);
  B.diagonal().setZero();
  const auto row = similarity_row(B.row(2).transpose(), 2, 3);
  EXPECT_TRUE(row.degenerate);
  for (double w : row.weights) EXPECT_DOUBLE_EQ(w, 1.0 / 3.0);
}

TEST(SimilarityRow, RejectsKOutsideRange) {
  const Vector b = Vector::LinSpaced(4, 0.0, 3.0);
  EXPECT_THROW(similarity_row(b, 0, 0), ParameterError);
  EXPECT_THROW(similarity_row(b, 0, 4), ParameterError);
  EXPECT_THROW(initial_knn_graph(Matrix::Random(4, 2), 4), ParameterError);
}

TEST(SimilarityRow, FixedXiMatchesBruteForceWhenFeasible) {
  std::mt19937_64 rng(3);
  const Matrix B = half_squared_distances(oracle::random_matrix(rng, 9, 2));
  const Vector b = B.row(4).transpose();
  const int k = 3;
  const auto auto_row = similarity_row(b, 4, k);
  // Any xi below the auto-tuned one and above the feasibility bound keeps k entries.
  std::vector<Index> order;
  for (Index j : auto_row.neighbors) order.push_back(j);
  double sum = 0.0;
  for (Index j : order) sum += b(j);
  const double bound = (k * b(order.back()) - sum) / 2.0;
  for (double t : {0.1, 0.5, 0.9}) {
    const double xi = bound + t * (auto_row.xi - bound);
    const auto row = similarity_row_with_xi(b, 4, k, xi);
    ASSERT_TRUE(row.has_value());
    const auto best = oracle::simplex_qp_bruteforce(others(b, 4), xi);
    EXPECT_NEAR((others(dense_row(*row, 9), 4) - best.s).cwiseAbs().maxCoeff(), 0.0, 1e-9);
  }
  EXPECT_FALSE(similarity_row_with_xi(b, 4, k, 0.5 * bound).has_value());
  EXPECT_FALSE(similarity_row_with_xi(b, 4, k, 0.0).has_value());
}

TEST(Laplacian, SymmetricZeroRowSumsAndMatchesPairwiseSum) {
  std::mt19937_64 rng(5);
  const Matrix X = oracle::random_matrix(rng, 15, 4);
  const auto g = initial_knn_graph(X, 4);
  const Matrix L = laplacian(g).L;
  EXPECT_NEAR((L - L.transpose()).norm(), 0.0, 1e-15);
  EXPECT_NEAR(L.rowwise().sum().cwiseAbs().maxCoeff(), 0.0, 1e-14);
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Matrix>(L).eigenvalues().minCoeff(), -1e-12);
  const Matrix Y = oracle::random_matrix(rng, 15, 3);
  EXPECT_NEAR((Y.transpose() * L * Y).trace(), oracle::graph_smoothness(g.S, Y), 1e-10);
}

TEST(UpdateSimilarity, UsesProjectedDistances) {
  std::mt19937_64 rng(9);
  const Matrix X = oracle::random_matrix(rng, 12, 5);
  const Matrix W = oracle::random_matrix(rng, 5, 5);
  const auto g = update_similarity(X, W, 3);
  const auto expected = similarity_from_distances(half_squared_distances(X * W), 3);
  EXPECT_NEAR((g.S - expected.S).norm(), 0.0, 1e-12);
  for (Index i = 0; i < 12; ++i) {
    EXPECT_EQ(g.S(i, i), 0.0);
    EXPECT_EQ((g.S.row(i).array() > 0.0).count(), 3);
    EXPECT_NEAR(g.S.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(RefreshSimilarity, NeverIncreasesTheRowObjectives) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix X = oracle::random_matrix(rng, 20, 4);
    const auto previous = initial_knn_graph(oracle::random_matrix(rng, 20, 4), 4);
    const Matrix W = oracle::random_matrix(rng, 4, 4, 0.5);
    RefreshStats stats;
    const auto g = refresh_similarity(X, W, previous, &stats);
    const Matrix B = half_squared_distances(X * W);
    double before = 0.0, after = 0.0;
    for (Index i = 0; i < 20; ++i) {
      before += row_objective(B.row(i).transpose(), previous.S, i, previous.xi(i));
      after += row_objective(B.row(i).transpose(), g.S, i, g.xi(i));
      EXPECT_NEAR(g.S.row(i).sum(), 1.0, 1e-12);
      EXPECT_EQ((g.S.row(i).array() > 0.0).count(), 4);
    }
    EXPECT_LE(after, before + 1e-12);
    EXPECT_EQ(stats.closed_form + stats.previous_xi + stats.kept, 20);
  }
}
