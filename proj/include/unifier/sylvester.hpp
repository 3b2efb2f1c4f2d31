#pragma once

// Generalized Sylvester equations  A X B + P X Q + ridge X = F  with A, B, P,
// Q symmetric positive semidefinite. The operator is then symmetric PSD in
// the Frobenius inner product, so conjugate gradients apply in matrix form.

#include "unifier/common.hpp"

#include <Eigen/LU>

#include <cmath>
#include <optional>
#include <string>

namespace unifier {

struct SylvesterSystem {
  Matrix A;  // m x m
  Matrix B;  // d x d
  Matrix P;  // m x m
  Matrix Q;  // d x d
  Matrix F;  // m x d
  double ridge = 0.0;

  Index rows() const { return F.rows(); }
  Index cols() const { return F.cols(); }
};

struct SolveReport {
  Matrix X;
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
  double ridge = 0.0;  // ridge in effect at the end, after any increases
};

/// 1e-8 ||F||_F / (m d)
inline double default_ridge(const Matrix& F) {
  if (F.size() == 0) return 0.0;
  return 1e-8 * F.norm() / static_cast<double>(F.size());
}

/// A X B + P X Q + ridge X
inline Matrix apply_operator(const SylvesterSystem& sys, const Matrix& X) {
  return sys.A * X * sys.B + sys.P * X * sys.Q + sys.ridge * X;
}

/// ||A X B + P X Q + ridge X - F||_F / max(||F||_F, 1)
inline double relative_residual(const SylvesterSystem& sys, const Matrix& X) {
  return (apply_operator(sys, X) - sys.F).norm() / std::max(sys.F.norm(), 1.0);
}

inline void check_system(const SylvesterSystem& sys) {
  const Index m = sys.rows(), d = sys.cols();
  auto square = [](const Matrix& M, Index size, const char* name) {
    if (M.rows() != size || M.cols() != size)
      throw ParameterError(std::string("Sylvester factor ") + name + " must be " +
                           std::to_string(size) + " x " + std::to_string(size));
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, M.cwiseAbs().maxCoeff()))
      throw ParameterError(std::string("Sylvester factor ") + name + " is not symmetric");
  };
  if (m == 0 || d == 0) return;
  square(sys.A, m, "A");
  square(sys.P, m, "P");
  square(sys.B, d, "B");
  square(sys.Q, d, "Q");
  if (sys.ridge < 0.0) throw ParameterError("Sylvester ridge must be nonnegative");
}

struct CgOutcome {
  int iterations = 0;
  bool converged = false;
  bool negative_curvature = false;
};

/// Conjugate gradients on a symmetric PSD operator acting on matrices,
/// starting from `x`. Stops once ||op(x) - rhs||_F <= threshold. The
/// recursively updated residual is replaced by the true one whenever it
/// claims convergence.
template <class Operator>
CgOutcome conjugate_gradient(const Operator& op, const Matrix& rhs, Matrix& x, double threshold,
                             int max_iter) {
  CgOutcome out;
  Matrix r = rhs - op(x);
  double rr = r.squaredNorm();
  if (std::sqrt(rr) <= threshold) {
    out.converged = true;
    return out;
  }
  Matrix p = r;
  while (out.iterations < max_iter) {
    const Matrix q = op(p);
    const double curvature = (p.array() * q.array()).sum();
    if (!(curvature > 0.0)) {
      out.negative_curvature = true;
      return out;
    }
    const double step = rr / curvature;
    x.noalias() += step * p;
    r.noalias() -= step * q;
    ++out.iterations;
    double rr_next = r.squaredNorm();
    if (std::sqrt(rr_next) <= threshold) {
      r = rhs - op(x);
      rr_next = r.squaredNorm();
      if (std::sqrt(rr_next) <= threshold) {
        out.converged = true;
        return out;
      }
      p = r;
      rr = rr_next;
      continue;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return out;
}

/// Matrix-form CG. On negative curvature the ridge is raised tenfold and the
/// solve restarts, at most three times.
inline SolveReport solve_cg(SylvesterSystem sys, double tol, int max_iter,
                            const std::optional<Matrix>& warm_start = std::nullopt) {
  check_system(sys);
  if (!(tol > 0.0)) throw ParameterError("Sylvester tolerance must be positive");
  const Index m = sys.rows(), d = sys.cols();
  if (warm_start && (warm_start->rows() != m || warm_start->cols() != d))
    throw ParameterError("warm start has the wrong shape");

  const double threshold = tol * std::max(sys.F.norm(), 1.0);
  const double scale = std::max(sys.A.norm() * sys.B.norm() + sys.P.norm() * sys.Q.norm(), 1e-300);
  SolveReport report;
  for (int restart = 0;; ++restart) {
    report.X = warm_start ? *warm_start : Matrix::Zero(m, d);
    if (m == 0 || d == 0) {
      report.converged = true;
      break;
    }
    auto op = [&sys](const Matrix& X) { return apply_operator(sys, X); };
    const auto outcome = conjugate_gradient(op, sys.F, report.X, threshold, max_iter);
    report.iterations += outcome.iterations;
    if (!outcome.negative_curvature) {
      report.converged = outcome.converged;
      break;
    }
    if (restart == 3)
      throw NumericalError("Sylvester operator is numerically indefinite (ridge " +
                           std::to_string(sys.ridge) + " after 3 increases)");
    sys.ridge = std::max(10.0 * sys.ridge, 1e-12 * scale);
  }
  report.ridge = sys.ridge;
  report.relative_residual = relative_residual(sys, report.X);
  return report;
}

/// Dense oracle: (B^T kron A + Q^T kron P + ridge I) vec(X) = vec(F).
inline SolveReport solve_dense(const SylvesterSystem& sys) {
  check_system(sys);
  const Index m = sys.rows(), d = sys.cols();
  const Index size = m * d;
  if (size > 4096)
    throw ParameterError("dense Sylvester oracle limited to m*d <= 4096, got " + std::to_string(size));
  SolveReport report;
  report.ridge = sys.ridge;
  report.converged = true;
  if (size == 0) {
    report.X = Matrix::Zero(m, d);
    return report;
  }
  Matrix K = sys.ridge * Matrix::Identity(size, size);
  for (Index j = 0; j < d; ++j)
    for (Index l = 0; l < d; ++l) {
      // block (l, j) multiplies column j of X and lands in column l of the result
      const double b = sys.B(j, l), q = sys.Q(j, l);
      if (b != 0.0) K.block(l * m, j * m, m, m) += b * sys.A;
      if (q != 0.0) K.block(l * m, j * m, m, m) += q * sys.P;
    }
  Eigen::FullPivLU<Matrix> lu(K);
  if (!lu.isInvertible())
    throw NumericalError("dense Sylvester system is singular (rank " + std::to_string(lu.rank()) +
                         " of " + std::to_string(size) + "); add a positive ridge");
  const Vector rhs = Eigen::Map<const Vector>(sys.F.data(), size);
  const Vector x = lu.solve(rhs);
  report.X = Eigen::Map<const Matrix>(x.data(), m, d);
  report.relative_residual = relative_residual(sys, report.X);
  return report;
}

}  // namespace unifier
