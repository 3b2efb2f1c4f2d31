#pragma once

// Adaptive k-nearest-neighbour sample graphs and their Laplacians.
//
// Row i of S is the neighbour distribution of sample i. Given the distances
// b_ij = 1/2 ||y_i - y_j||^2 sorted ascending (self excluded by index), the
// row minimizes  sum_j b_ij s_ij + xi_i ||s_i||^2  over the probability
// simplex, and xi_i is chosen as the largest value that keeps exactly k
// entries nonzero:
//
//   s_ij = (b_{i,k+1} - b_ij) / (k b_{i,k+1} - sum_{t<=k} b_it)   for the k nearest
//   xi_i = (k b_{i,k+1} - sum_{t<=k} b_it) / 2

#include "unifier/common.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace unifier {

struct SimilarityGraph {
  Matrix S;   // n x n, rows on the simplex, zero diagonal
  int k = 0;
  Vector xi;  // per-row regularization picked by the closed form
};

struct GraphLaplacian {
  Matrix L;  // G - (S + S^T)/2
};

/// Closed-form weights of one row.
struct NeighborRow {
  IndexList neighbors;  // k nearest, ascending distance then index
  std::vector<double> weights;
  double xi = 0.0;
  bool degenerate = false;  // zero denominator, uniform 1/k used
};

namespace detail {

// First min(k+1, n-1) neighbours of `self`, ascending distance then index.
inline IndexList nearest_order(const Eigen::Ref<const Vector>& b, Index self, int k) {
  const Index n = b.size();
  if (k < 1 || k > n - 1)
    throw ParameterError("neighbour count k=" + std::to_string(k) + " must lie in [1, " +
                         std::to_string(n - 1) + "]");
  IndexList order;
  order.reserve(static_cast<std::size_t>(n - 1));
  for (Index j = 0; j < n; ++j)
    if (j != self) order.push_back(j);
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k) + 1, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](Index a, Index c) { return b(a) < b(c) || (b(a) == b(c) && a < c); });
  order.resize(take);
  return order;
}

}  // namespace detail

/// Solves one row given distances `b` to every sample; `self` is excluded
/// by index. Ties at equal distance are broken by ascending sample index.
/// When k = n - 1 there is no (k+1)-th neighbour; the row is uniform.
inline NeighborRow similarity_row(const Eigen::Ref<const Vector>& b, Index self, int k) {
  const auto order = detail::nearest_order(b, self, k);
  NeighborRow row;
  row.neighbors.assign(order.begin(), order.begin() + k);
  row.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
  if (static_cast<Index>(order.size()) == k) {
    row.degenerate = true;
    return row;
  }
  const double next = b(order[static_cast<std::size_t>(k)]);
  double sum = 0.0;
  for (Index j : row.neighbors) sum += b(j);
  const double denom = k * next - sum;
  if (!(denom > 1e-14 * k * std::abs(next))) {
    row.degenerate = true;
    return row;
  }
  for (int t = 0; t < k; ++t)
    row.weights[static_cast<std::size_t>(t)] = (next - b(row.neighbors[static_cast<std::size_t>(t)])) / denom;
  row.xi = denom / 2.0;
  return row;
}

/// Minimizer of sum_j b_j s_j + xi ||s||^2 over the simplex restricted to the
/// k nearest samples. Every weight stays positive iff xi exceeds
/// (k b_k - sum_{t<=k} b_t) / 2; returns nullopt otherwise.
inline std::optional<NeighborRow> similarity_row_with_xi(const Eigen::Ref<const Vector>& b,
                                                         Index self, int k, double xi) {
  const auto order = detail::nearest_order(b, self, k);
  NeighborRow row;
  row.neighbors.assign(order.begin(), order.begin() + k);
  double sum = 0.0;
  for (Index j : row.neighbors) sum += b(j);
  const double farthest = b(row.neighbors.back());
  if (!(2.0 * xi > k * farthest - sum) || !(xi > 0.0)) return std::nullopt;
  const double level = (2.0 * xi + sum) / k;
  row.weights.resize(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t)
    row.weights[static_cast<std::size_t>(t)] = (level - b(row.neighbors[static_cast<std::size_t>(t)])) / (2.0 * xi);
  row.xi = xi;
  return row;
}

/// Pairwise b_ij = 1/2 ||y_i - y_j||^2 between rows of Y.
inline Matrix half_squared_distances(const Matrix& Y) {
  const Index n = Y.rows();
  const Matrix Yt = Y.transpose();
  Matrix B = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      const double d = 0.5 * (Yt.col(i) - Yt.col(j)).squaredNorm();
      B(i, j) = d;
      B(j, i) = d;
    }
  return B;
}

/// Builds S row by row from a distance matrix. Rows are independent.
inline SimilarityGraph similarity_from_distances(const Matrix& B, int k) {
  const Index n = B.rows();
  SimilarityGraph g{Matrix::Zero(n, n), k, Vector::Zero(n)};
  for (Index i = 0; i < n; ++i) {
    const auto row = similarity_row(B.row(i).transpose(), i, k);
    for (int t = 0; t < k; ++t)
      g.S(i, row.neighbors[static_cast<std::size_t>(t)]) = row.weights[static_cast<std::size_t>(t)];
    g.xi(i) = row.xi;
  }
  return g;
}

/// Value of row i, sum_j b_ij s_ij + xi_i ||s_i||^2.
inline double row_objective(const Eigen::Ref<const Vector>& b, const Matrix& S, Index i, double xi) {
  return b.dot(S.row(i).transpose()) + xi * S.row(i).squaredNorm();
}

/// S-update: distances measured between projected samples X W.
inline SimilarityGraph update_similarity(const Matrix& Xt, const Matrix& W, int k) {
  if (W.rows() != Xt.cols() || W.cols() != Xt.cols())
    throw ParameterError("projection must be d x d with d = " + std::to_string(Xt.cols()));
  if (k < 1 || k >= Xt.rows())
    throw ParameterError("neighbour count k=" + std::to_string(k) + " requires k < n=" +
                         std::to_string(Xt.rows()));
  return similarity_from_distances(half_squared_distances(Xt * W), k);
}

/// Counts of how each row of a safeguarded refresh was produced.
struct RefreshStats {
  Index closed_form = 0;   // auto-tuned xi accepted
  Index previous_xi = 0;   // re-solved with the previous xi
  Index kept = 0;          // previous row kept unchanged
};

/// S-update that never increases sum_i (sum_j b_ij s_ij + xi_i ||s_i||^2)
/// relative to `previous` evaluated on the new distances. Per row, the
/// auto-tuned closed form is accepted when it does not increase the row
/// value; otherwise the row is re-solved with the previous xi when that still
/// leaves exactly k positive weights, and kept as is failing that.
inline SimilarityGraph refresh_similarity(const Matrix& Xt, const Matrix& W,
                                          const SimilarityGraph& previous,
                                          RefreshStats* stats = nullptr) {
  const int k = previous.k;
  const Matrix B = half_squared_distances(Xt * W);
  const Index n = B.rows();
  if (previous.S.rows() != n) throw ParameterError("previous graph has the wrong size");
  SimilarityGraph g{Matrix::Zero(n, n), k, Vector::Zero(n)};
  RefreshStats local;
  for (Index i = 0; i < n; ++i) {
    const Vector b = B.row(i).transpose();
    const double before = row_objective(b, previous.S, i, previous.xi(i));
    const auto fresh = similarity_row(b, i, k);
    double value = fresh.xi * std::accumulate(fresh.weights.begin(), fresh.weights.end(), 0.0,
                                              [](double a, double w) { return a + w * w; });
    for (int t = 0; t < k; ++t)
      value += b(fresh.neighbors[static_cast<std::size_t>(t)]) * fresh.weights[static_cast<std::size_t>(t)];
    std::optional<NeighborRow> chosen;
    if (value <= before) {
      chosen = fresh;
      ++local.closed_form;
    } else if ((chosen = similarity_row_with_xi(b, i, k, previous.xi(i)))) {
      ++local.previous_xi;
    }
    if (!chosen) {
      g.S.row(i) = previous.S.row(i);
      g.xi(i) = previous.xi(i);
      ++local.kept;
      continue;
    }
    for (int t = 0; t < k; ++t)
      g.S(i, chosen->neighbors[static_cast<std::size_t>(t)]) = chosen->weights[static_cast<std::size_t>(t)];
    g.xi(i) = chosen->xi;
  }
  if (stats) *stats = local;
  return g;
}

/// Initial graph on the raw (mean-imputed) features.
inline SimilarityGraph initial_knn_graph(const Matrix& X, int k) {
  if (k < 1 || k >= X.rows())
    throw ParameterError("neighbour count k=" + std::to_string(k) + " requires k < n=" +
                         std::to_string(X.rows()));
  return similarity_from_distances(half_squared_distances(X), k);
}

inline GraphLaplacian laplacian(const SimilarityGraph& graph) {
  const Matrix sym = 0.5 * (graph.S + graph.S.transpose());
  Matrix L = -sym;
  L.diagonal() += sym.rowwise().sum();
  return {std::move(L)};
}

/// sum_i xi_i ||s_i||^2
inline double regularization_value(const SimilarityGraph& graph) {
  return (graph.xi.array() * graph.S.rowwise().squaredNorm().array()).sum();
}

}  // namespace unifier
