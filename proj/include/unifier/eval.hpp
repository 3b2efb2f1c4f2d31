#pragma once

// Clustering-based evaluation of selected features: k-means with k-means++
// seeding, clustering accuracy under the best one-to-one label matching, and
// normalized mutual information.

#include "unifier/common.hpp"
#include "unifier/data.hpp"
#include "unifier/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace unifier {

struct KMeansResult {
  Labels labels;
  Matrix centroids;
  double inertia = 0.0;
};

struct ClusteringOutcome {
  Labels predicted;
  double acc = 0.0;
  double nmi = 0.0;
  int restarts = 0;
};

namespace detail {

inline Index nearest_centroid(const Matrix& Xt, Index i, const Matrix& C, double* dist) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < C.cols(); ++c) {
    const double d = (Xt.col(i) - C.col(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

// Points are columns of Xt; centroids are columns of the result.
inline Matrix kmeanspp_seed(const Matrix& Xt, int c, std::mt19937_64& rng) {
  const Index n = Xt.cols();
  Matrix C(Xt.rows(), c);
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  auto first = static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(n)));
  C.col(0) = Xt.col(first);
  chosen[static_cast<std::size_t>(first)] = true;
  Vector d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = (Xt.col(i) - C.col(0)).squaredNorm();
  for (int j = 1; j < c; ++j) {
    const double total = d2.sum();
    Index pick = -1;
    if (total > 0.0) {
      double u = uniform_unit(rng) * total;
      for (Index i = 0; i < n; ++i) {
        if (d2(i) <= 0.0) continue;
        pick = i;
        u -= d2(i);
        if (u < 0.0) break;
      }
    } else {
      // every point coincides with a centroid; take an unused index
      IndexList unused;
      for (Index i = 0; i < n; ++i)
        if (!chosen[static_cast<std::size_t>(i)]) unused.push_back(i);
      pick = unused[static_cast<std::size_t>(uniform_below(rng, unused.size()))];
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    C.col(j) = Xt.col(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (Xt.col(i) - C.col(j)).squaredNorm());
  }
  return C;
}

inline KMeansResult lloyd(const Matrix& Xt, Matrix C, int max_iter) {
  const Index n = Xt.cols();
  const Index c = C.cols();
  Labels labels(static_cast<std::size_t>(n), -1);
  Vector dist(n);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      const auto a = static_cast<int>(nearest_centroid(Xt, i, C, &dist(i)));
      if (a != labels[static_cast<std::size_t>(i)]) {
        labels[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(Xt.rows(), c);
    std::vector<Index> counts(static_cast<std::size_t>(c), 0);
    for (Index i = 0; i < n; ++i) {
      sums.col(labels[static_cast<std::size_t>(i)]) += Xt.col(i);
      ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    for (Index j = 0; j < c; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) {
        C.col(j) = sums.col(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
        continue;
      }
      // empty cluster: re-seed from the point farthest from its centroid
      Index far = 0;
      dist.maxCoeff(&far);
      C.col(j) = Xt.col(far);
      dist(far) = 0.0;
    }
  }
  KMeansResult out;
  out.inertia = 0.0;
  for (Index i = 0; i < n; ++i) {
    double d = 0.0;
    labels[static_cast<std::size_t>(i)] = static_cast<int>(nearest_centroid(Xt, i, C, &d));
    out.inertia += d;
  }
  out.labels = std::move(labels);
  out.centroids = C.transpose();
  return out;
}

}  // namespace detail

/// Sum of squared distances of each row to the mean of its cluster.
inline double inertia(const Matrix& X, const Labels& labels) {
  std::map<int, std::pair<Vector, Index>> acc;
  for (Index i = 0; i < X.rows(); ++i) {
    auto [it, fresh] = acc.try_emplace(labels[static_cast<std::size_t>(i)], Vector::Zero(X.cols()), 0);
    it->second.first += X.row(i).transpose();
    ++it->second.second;
  }
  double total = 0.0;
  for (Index i = 0; i < X.rows(); ++i) {
    const auto& [sum, count] = acc.at(labels[static_cast<std::size_t>(i)]);
    total += (X.row(i).transpose() - sum / static_cast<double>(count)).squaredNorm();
  }
  return total;
}

/// Best of `restarts` k-means++ seeded Lloyd runs (lowest inertia).
inline KMeansResult kmeans(const Matrix& X, int c, int restarts, std::uint64_t seed,
                           int max_iter = 300) {
  if (c < 2 || c > X.rows())
    throw ParameterError("cluster count " + std::to_string(c) + " must lie in [2, n=" +
                         std::to_string(X.rows()) + "]");
  if (restarts < 1) throw ParameterError("restarts must be at least 1");
  std::mt19937_64 rng(derive_seed(seed, "kmeans"));
  const Matrix Xt = X.transpose();
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    auto run = detail::lloyd(Xt, detail::kmeanspp_seed(Xt, c, rng), max_iter);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method, O(n^3)). Returns the column assigned to each row.
inline std::vector<Index> min_cost_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials over rows (u) and columns (v); p[j] is the row matched to column j.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(static_cast<std::size_t>(n), 0);
  for (Index j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] > 0)
      assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assignment;
}

namespace detail {

struct Contingency {
  Matrix counts;  // pred classes x truth classes
  Index n = 0;
};

inline Contingency contingency(const Labels& pred, const Labels& truth) {
  if (pred.size() != truth.size())
    throw InputError("label vectors differ in length: " + std::to_string(pred.size()) + " vs " +
                     std::to_string(truth.size()));
  if (pred.empty()) throw InputError("label vectors are empty");
  std::map<int, Index> pi, ti;
  for (int y : pred) pi.try_emplace(y, static_cast<Index>(pi.size()));
  for (int y : truth) ti.try_emplace(y, static_cast<Index>(ti.size()));
  Contingency c{Matrix::Zero(static_cast<Index>(pi.size()), static_cast<Index>(ti.size())),
                static_cast<Index>(pred.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) c.counts(pi[pred[i]], ti[truth[i]]) += 1.0;
  return c;
}

}  // namespace detail

/// Fraction of samples that agree under the best one-to-one mapping of
/// predicted clusters onto classes.
inline double accuracy(const Labels& pred, const Labels& truth) {
  const auto c = detail::contingency(pred, truth);
  const Index size = std::max(c.counts.rows(), c.counts.cols());
  Matrix square = Matrix::Zero(size, size);
  square.topLeftCorner(c.counts.rows(), c.counts.cols()) = c.counts;
  const Matrix cost = square.maxCoeff() - square.array();
  const auto assignment = min_cost_assignment(cost);
  double matched = 0.0;
  for (Index r = 0; r < size; ++r) matched += square(r, assignment[static_cast<std::size_t>(r)]);
  return matched / static_cast<double>(c.n);
}

/// I(pred; truth) / sqrt(H(pred) H(truth)) with natural logarithms. A zero
/// entropy gives 1 when both labelings are single-class, 0 otherwise.
inline double nmi(const Labels& pred, const Labels& truth) {
  const auto c = detail::contingency(pred, truth);
  const double n = static_cast<double>(c.n);
  const Vector pr = c.counts.rowwise().sum() / n;
  const Vector tr = c.counts.colwise().sum().transpose() / n;
  auto entropy = [](const Vector& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i)
      if (p(i) > 0.0) h -= p(i) * std::log(p(i));
    return h;
  };
  const double hp = entropy(pr), ht = entropy(tr);
  if (c.counts.rows() == 1 && c.counts.cols() == 1) return 1.0;
  if (hp <= 0.0 || ht <= 0.0) return 0.0;
  double mi = 0.0;
  for (Index a = 0; a < c.counts.rows(); ++a)
    for (Index b = 0; b < c.counts.cols(); ++b) {
      const double pab = c.counts(a, b) / n;
      if (pab > 0.0) mi += pab * std::log(pab / (pr(a) * tr(b)));
    }
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

/// Top ceil(fraction * d_v) ranked columns of every completed view, side by side.
inline Matrix selected_features(const SelectionResult& result, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("fraction must lie in (0, 1]");
  std::vector<std::pair<std::size_t, Index>> columns;
  for (std::size_t v = 0; v < result.views.size(); ++v) {
    const auto d = static_cast<Index>(result.views[v].ranking.size());
    const auto count = std::clamp<Index>(
        static_cast<Index>(std::ceil(fraction * static_cast<double>(d) - 1e-9)), 1, d);
    for (Index j = 0; j < count; ++j) columns.emplace_back(v, result.views[v].ranking[static_cast<std::size_t>(j)]);
  }
  const Index n = result.completed.front().rows();
  Matrix X(n, static_cast<Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j)
    X.col(static_cast<Index>(j)) = result.completed[columns[j].first].col(columns[j].second);
  return X;
}

/// k-means on the selected columns of the completed views, scored against
/// the dataset labels. Uses the result's select_fraction unless given.
inline ClusteringOutcome evaluate_selection(const MultiViewDataset& dataset,
                                            const SelectionResult& result, int clusters,
                                            int restarts, std::uint64_t seed,
                                            std::optional<double> fraction = std::nullopt) {
  if (!dataset.labels)
    throw InputError("evaluation needs ground-truth labels; add a \"labels\" file to the manifest");
  const Matrix X = selected_features(result, fraction.value_or(result.config.select_fraction));
  const auto km = kmeans(X, clusters, restarts, seed);
  ClusteringOutcome out;
  out.predicted = km.labels;
  out.acc = accuracy(km.labels, *dataset.labels);
  out.nmi = nmi(km.labels, *dataset.labels);
  out.restarts = restarts;
  return out;
}

}  // namespace unifier
