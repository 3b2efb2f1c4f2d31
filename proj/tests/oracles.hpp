#pragma once

// Slow, direct reference computations used to check the library.
// Nothing here calls into the code under test.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix M(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = g(rng);
  return M;
}

inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double shift = 0.1) {
  const Matrix G = random_matrix(rng, n, n);
  return G * G.transpose() + shift * Matrix::Identity(n, n);
}

/// Value and argmin of  b.s + xi ||s||^2  over the probability simplex on
/// the given coordinates, by enumerating every support set. For a fixed
/// support T the stationary point is s_j = (mu - b_j) / (2 xi) with mu chosen
/// so the weights sum to one; it is a candidate when every weight is >= 0.
struct SimplexSolution {
  double value = std::numeric_limits<double>::infinity();
  Vector s;
};

inline SimplexSolution simplex_qp_bruteforce(const Vector& b, double xi) {
  const auto n = static_cast<int>(b.size());
  SimplexSolution best;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    double sum = 0.0;
    int size = 0;
    for (int j = 0; j < n; ++j)
      if (mask & (1u << j)) {
        sum += b(j);
        ++size;
      }
    const double mu = (2.0 * xi + sum) / size;
    Vector s = Vector::Zero(n);
    bool feasible = true;
    for (int j = 0; j < n; ++j)
      if (mask & (1u << j)) {
        s(j) = (mu - b(j)) / (2.0 * xi);
        if (s(j) < -1e-12) feasible = false;
      }
    if (!feasible) continue;
    const double value = b.dot(s) + xi * s.squaredNorm();
    if (value < best.value) best = {value, s};
  }
  return best;
}

/// Explicit Kronecker product.
inline Matrix kron(const Matrix& X, const Matrix& Y) {
  Matrix K(X.rows() * Y.rows(), X.cols() * Y.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      K.block(i * Y.rows(), j * Y.cols(), Y.rows(), Y.cols()) = X(i, j) * Y;
  return K;
}

/// Solves A X B + P X Q + ridge X = F through vec(A X B) = (B^T kron A) vec(X),
/// with a QR factorization.
inline Matrix sylvester_kron(const Matrix& A, const Matrix& B, const Matrix& P, const Matrix& Q,
                             const Matrix& F, double ridge) {
  const auto m = F.rows(), d = F.cols();
  Matrix K = kron(B.transpose(), A) + kron(Q.transpose(), P);
  K += ridge * Matrix::Identity(m * d, m * d);
  const Vector f = Eigen::Map<const Vector>(F.data(), F.size());
  const Vector x = K.colPivHouseholderQr().solve(f);
  return Eigen::Map<const Matrix>(x.data(), m, d);
}

/// Central-difference gradient of a scalar function of a matrix.
template <class F>
Matrix numeric_gradient(const F& f, Matrix X, double h = 1e-6) {
  Matrix G(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double x0 = X(i, j);
      X(i, j) = x0 + h;
      const double up = f(X);
      X(i, j) = x0 - h;
      const double down = f(X);
      X(i, j) = x0;
      G(i, j) = (up - down) / (2.0 * h);
    }
  return G;
}

/// 1/2 sum_ij s_ij ||y_i - y_j||^2 with plain loops.
inline double graph_smoothness(const Matrix& S, const Matrix& Y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      double dist = 0.0;
      for (Eigen::Index c = 0; c < Y.cols(); ++c) dist += (Y(i, c) - Y(j, c)) * (Y(i, c) - Y(j, c));
      total += 0.5 * S(i, j) * dist;
    }
  return total;
}

/// Best label agreement over every bijection of predicted onto true classes.
inline double accuracy_bruteforce(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::vector<int> p_classes(pred.begin(), pred.end()), t_classes(truth.begin(), truth.end());
  std::sort(p_classes.begin(), p_classes.end());
  p_classes.erase(std::unique(p_classes.begin(), p_classes.end()), p_classes.end());
  std::sort(t_classes.begin(), t_classes.end());
  t_classes.erase(std::unique(t_classes.begin(), t_classes.end()), t_classes.end());
  // Pad the truth classes with dummies so every predicted class can map somewhere.
  while (t_classes.size() < p_classes.size()) t_classes.push_back(std::numeric_limits<int>::min() + static_cast<int>(t_classes.size()));
  std::vector<int> perm(t_classes.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::map<int, int> mapping;
    for (std::size_t a = 0; a < p_classes.size(); ++a) mapping[p_classes[a]] = t_classes[static_cast<std::size_t>(perm[a])];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += mapping[pred[i]] == truth[i];
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

/// I(U;V) / sqrt(H(U) H(V)) from counts, natural log.
inline double nmi_direct(const std::vector<int>& u, const std::vector<int>& v) {
  const double n = static_cast<double>(u.size());
  std::map<int, double> cu, cv;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cu[u[i]] += 1;
    cv[v[i]] += 1;
    joint[{u[i], v[i]}] += 1;
  }
  auto entropy = [&](const std::map<int, double>& c) {
    double h = 0.0;
    for (const auto& [_, k] : c) h -= k / n * std::log(k / n);
    return h;
  };
  double mi = 0.0;
  for (const auto& [key, k] : joint) mi += k / n * std::log(k * n / (cu[key.first] * cv[key.second]));
  return mi / std::sqrt(entropy(cu) * entropy(cv));
}

/// Within-cluster sum of squared distances to the cluster means.
inline double within_ss(const Matrix& X, const std::vector<int>& labels) {
  std::map<int, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(static_cast<Eigen::Index>(i));
  double total = 0.0;
  for (const auto& [_, rows] : groups) {
    Vector mean = Vector::Zero(X.cols());
    for (auto i : rows) mean += X.row(i).transpose();
    mean /= static_cast<double>(rows.size());
    for (auto i : rows) total += (X.row(i).transpose() - mean).squaredNorm();
  }
  return total;
}

}  // namespace oracle
