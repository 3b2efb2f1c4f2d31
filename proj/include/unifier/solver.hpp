#pragma once

// Alternating minimization of the joint imputation / feature-selection
// objective. Per view v, with completed data Xt, projection W, sample
// weights e, neighbour graph S (Laplacian L) and per-row xi:
//
//   alpha * sum_i ( e_i ||xt_i - xt_i W||^2 + gamma (sqrt(e_i) - 1)^2 )
//   + tr(W^T Xt^T L Xt W)                       (= 1/2 sum_ij s_ij ||xt_i W - xt_j W||^2)
//   + sum_i xi_i ||s_i||^2
//   + lambda * sum_i sqrt(||w_i||^2 + eps)
//
// Each outer iteration updates W, D, the missing block, S and e in that order.

#include "unifier/common.hpp"
#include "unifier/data.hpp"
#include "unifier/graph.hpp"
#include "unifier/sylvester.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace unifier {

enum class Ablation {
  full,
  no_imputation,      // missing blocks stay at their mean initialization
  no_sample_weights,  // e pinned to 1, never updated
};

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_imputation: return "no_imputation";
    case Ablation::no_sample_weights: return "no_sample_weights";
  }
  return "full";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_imputation") return Ablation::no_imputation;
  if (s == "no_sample_weights") return Ablation::no_sample_weights;
  throw ParameterError("unknown ablation '" + s + "' (full | no_imputation | no_sample_weights)");
}

struct SylvesterConfig {
  double tol = 1e-10;
  int max_iter = 500;
  std::optional<double> ridge;  // default: 1e-8 ||F||_F / (m d)
  bool warm_start = true;
};

struct SolverConfig {
  std::vector<double> alpha{1.0};  // one value broadcast to every view, or one per view
  double lambda = 1.0;
  double gamma = 1.0;
  int k = 5;
  double eps = 1e-8;
  int max_iter = 100;
  double tol = 1e-5;
  double select_fraction = 0.4;
  Ablation ablation = Ablation::full;
  std::uint64_t seed = 0;
  bool standardize = true;
  SylvesterConfig sylvester;
  // Objective re-evaluated after every step; an increase beyond this relative
  // slack aborts the run.
  bool check_monotone = true;
  double monotone_slack = 1e-9;
  // Rows whose auto-tuned xi would raise the objective fall back to the
  // previous xi (see refresh_similarity).
  bool xi_safeguard = true;

  double alpha_for(Index view) const {
    return alpha.size() == 1 ? alpha.front() : alpha.at(static_cast<std::size_t>(view));
  }

  void validate(Index num_samples, Index num_views) const {
    if (alpha.empty() || (alpha.size() != 1 && static_cast<Index>(alpha.size()) != num_views))
      throw ParameterError("alpha needs one value or one per view (" + std::to_string(num_views) + ")");
    for (double a : alpha)
      if (!(a > 0.0)) throw ParameterError("alpha must be positive");
    if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
    if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
    if (!(eps > 0.0)) throw ParameterError("eps must be positive");
    if (k < 1 || k > num_samples - 1)
      throw ParameterError("k=" + std::to_string(k) + " must lie in [1, n-1] with n=" +
                           std::to_string(num_samples));
    if (max_iter < 1) throw ParameterError("max_iter must be at least 1");
    if (!(tol >= 0.0)) throw ParameterError("tol must be nonnegative");
    if (!(select_fraction > 0.0 && select_fraction <= 1.0))
      throw ParameterError("select_fraction must lie in (0, 1]");
    if (!(sylvester.tol > 0.0)) throw ParameterError("Sylvester tolerance must be positive");
    if (sylvester.max_iter < 1) throw ParameterError("Sylvester max_iter must be at least 1");
    if (sylvester.ridge && !(*sylvester.ridge >= 0.0))
      throw ParameterError("ridge must be nonnegative");
  }
};

/// Mutable per-view state of the alternating scheme.
struct ViewState {
  IndicatorPair indicators;
  Matrix observed;  // observed rows, never modified
  Matrix missing;   // current imputation of the missing rows
  Matrix Xt;        // completed view
  Matrix W;
  Vector D;  // IRLS diagonal
  Vector e;  // sample weights
  SimilarityGraph graph;
  GraphLaplacian laplacian;
  int sylvester_iterations = 0;
  Index safeguarded_rows = 0;

  void reassemble() { Xt = assemble(indicators, observed, missing); }
};

struct SolverState {
  std::vector<ViewState> views;
  std::vector<double> trace;  // objective after each outer iteration
  int iteration = 0;
};

struct ObjectiveTerms {
  double reconstruction = 0.0;  // alpha sum e_i r_i
  double robust = 0.0;          // alpha gamma sum (sqrt(e_i) - 1)^2
  double graph = 0.0;           // 1/2 sum s_ij ||y_i - y_j||^2
  double regularization = 0.0;  // sum xi_i ||s_i||^2
  double sparsity = 0.0;        // lambda sum sqrt(||w_i||^2 + eps)

  double total() const { return reconstruction + robust + graph + regularization + sparsity; }
};

// ---------------------------------------------------------------------------
// W step

/// Value of the W subproblem with the l2,1 term replaced by tr(W^T D W):
///   alpha ||E(X - XW)||_F^2 + lambda tr(W^T D W) + tr(W^T X^T L X W)
inline double w_subproblem_objective(const Matrix& Xt, const Vector& e, const Matrix& L,
                                     const Vector& D, const Matrix& W, double alpha, double lambda) {
  const Matrix R = Xt - Xt * W;
  const Matrix XW = Xt * W;
  return alpha * (R.rowwise().squaredNorm().array() * e.array()).sum() +
         lambda * (W.rowwise().squaredNorm().array() * D.array()).sum() +
         (XW.transpose() * L * XW).trace();
}

inline Matrix w_subproblem_gradient(const Matrix& Xt, const Vector& e, const Matrix& L,
                                    const Vector& D, const Matrix& W, double alpha, double lambda) {
  const Matrix XtH = Xt.transpose() * e.asDiagonal();
  return 2.0 * alpha * XtH * (Xt * W - Xt) + 2.0 * lambda * D.asDiagonal() * W +
         2.0 * Xt.transpose() * (L * (Xt * W));
}

/// W = alpha (C + lambda D)^{-1} Xt^T H Xt, with C = alpha Xt^T H Xt + Xt^T L Xt
/// and H = diag(e). Solved by Cholesky; a single jitter of 1e-10 tr/d is
/// tried before giving up.
inline Matrix update_W(const Matrix& Xt, const Vector& e, const Matrix& L, const Vector& D,
                       double alpha, double lambda) {
  const Index d = Xt.cols();
  if (e.size() != Xt.rows() || L.rows() != Xt.rows() || L.cols() != Xt.rows() || D.size() != d)
    throw ParameterError("update_W: inconsistent dimensions");
  const Matrix gram = Xt.transpose() * e.asDiagonal() * Xt;
  const Matrix rhs = alpha * gram;
  Matrix system = alpha * gram + Xt.transpose() * (L * Xt);
  system.diagonal() += lambda * D;
  system = 0.5 * (system + system.transpose());

  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * system.trace() / static_cast<double>(d);
    system.diagonal().array() += jitter;
    llt.compute(system);
    if (llt.info() != Eigen::Success)
      throw NumericalError("W update: C + lambda D is not positive definite even after jitter " +
                           std::to_string(jitter) + " (trace " + std::to_string(system.trace()) + ")");
  }
  return llt.solve(rhs);
}

/// D(i,i) = 1 / (2 sqrt(||w_i||^2 + eps))
inline Vector update_D(const Matrix& W, double eps) {
  return (2.0 * (W.rowwise().squaredNorm().array() + eps).sqrt()).inverse().matrix();
}

// ---------------------------------------------------------------------------
// Missing-block step

/// Stationarity system of the missing rows Z:  A Z B + P Z Q = F with
///   A = L[mis, mis], B = W W^T, P = alpha diag(e[mis]), Q = (I - W)(I - W)^T,
///   F = -alpha R Q - L[mis, obs] X_obs W W^T.
/// R = K_mis^T H K_obs X_obs vanishes because H = diag(e) is diagonal.
inline SylvesterSystem build_missing_system(const ViewState& view, double alpha) {
  const auto& k = view.indicators;
  const Index m = k.num_missing(), d = view.W.rows();
  const Matrix& L = view.laplacian.L;

  SylvesterSystem sys;
  sys.A.resize(m, m);
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < m; ++b) sys.A(a, b) = L(k.missing_rows[a], k.missing_rows[b]);
  Matrix L_mo(m, k.num_observed());
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < k.num_observed(); ++b) L_mo(a, b) = L(k.missing_rows[a], k.observed_rows[b]);

  Matrix B = view.W * view.W.transpose();
  sys.B = 0.5 * (B + B.transpose());
  const Matrix IW = Matrix::Identity(d, d) - view.W;
  Matrix Q = IW * IW.transpose();
  sys.Q = 0.5 * (Q + Q.transpose());
  Vector e_mis(m);
  for (Index a = 0; a < m; ++a) e_mis(a) = view.e(k.missing_rows[a]);
  sys.P = (alpha * e_mis).asDiagonal();
  sys.F = -(L_mo * view.observed) * sys.B;
  return sys;
}

/// Terms of the objective that involve the missing rows:
///   alpha sum_i e_i ||xt_i - xt_i W||^2 + tr(W^T Xt^T L Xt W)
inline double missing_block_objective(const ViewState& view, double alpha) {
  const Matrix R = view.Xt - view.Xt * view.W;
  const Matrix Y = view.Xt * view.W;
  return alpha * (R.rowwise().squaredNorm().array() * view.e.array()).sum() +
         (Y.transpose() * view.laplacian.L * Y).trace();
}

/// Replaces the missing block by the CG solution of its Sylvester system and
/// reassembles the completed view. No-op when nothing is missing.
inline std::optional<SolveReport> update_missing_block(ViewState& view, double alpha,
                                                       const SylvesterConfig& cfg) {
  if (view.indicators.num_missing() == 0) return std::nullopt;
  auto sys = build_missing_system(view, alpha);
  sys.ridge = cfg.ridge ? *cfg.ridge : default_ridge(sys.F);
  std::optional<Matrix> start;
  if (cfg.warm_start) start = view.missing;
  auto report = solve_cg(std::move(sys), cfg.tol, cfg.max_iter, start);
  view.missing = report.X;
  view.sylvester_iterations += report.iterations;
  view.reassemble();
  return report;
}

// ---------------------------------------------------------------------------
// e step

/// ||xt_i - xt_i W||^2 for every row.
inline Vector reconstruction_residuals(const Matrix& Xt, const Matrix& W) {
  return (Xt - Xt * W).rowwise().squaredNorm();
}

/// e_i = (gamma / (gamma + r_i))^2, the minimizer of e r + gamma (sqrt(e) - 1)^2.
inline Vector update_sample_weights(const Matrix& Xt, const Matrix& W, double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
  const Vector r = reconstruction_residuals(Xt, W);
  return (gamma / (gamma + r.array())).square().matrix();
}

// ---------------------------------------------------------------------------
// Objective

inline ObjectiveTerms objective_terms(const ViewState& view, double alpha, double lambda,
                                      double gamma, double eps) {
  ObjectiveTerms t;
  const Vector r = reconstruction_residuals(view.Xt, view.W);
  t.reconstruction = alpha * (view.e.array() * r.array()).sum();
  t.robust = alpha * gamma * (view.e.array().sqrt() - 1.0).square().sum();
  const Matrix Y = view.Xt * view.W;
  t.graph = (Y.transpose() * view.laplacian.L * Y).trace();
  t.regularization = regularization_value(view.graph);
  t.sparsity = lambda * (view.W.rowwise().squaredNorm().array() + eps).sqrt().sum();
  return t;
}

inline double objective_value(const SolverState& state, const SolverConfig& config) {
  double total = 0.0;
  for (std::size_t v = 0; v < state.views.size(); ++v) {
    const auto t = objective_terms(state.views[v], config.alpha_for(static_cast<Index>(v)),
                                   config.lambda, config.gamma, config.eps);
    const std::pair<const char*, double> named[] = {{"reconstruction", t.reconstruction},
                                                    {"robust", t.robust},
                                                    {"graph", t.graph},
                                                    {"regularization", t.regularization},
                                                    {"sparsity", t.sparsity}};
    for (const auto& [name, value] : named)
      if (!std::isfinite(value))
        throw NumericalError("objective term '" + std::string(name) + "' of view " +
                             std::to_string(v) + " is not finite");
    total += t.total();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Feature ranking

/// Indices sorted by descending row norm of W (ties: ascending index),
/// truncated to ceil(fraction * d).
inline IndexList rank_features(const Matrix& W, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("fraction must lie in (0, 1]");
  const Index d = W.rows();
  const Vector norms = W.rowwise().norm();
  IndexList order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return norms(a) > norms(b); });
  const auto count = std::clamp<Index>(
      static_cast<Index>(std::ceil(fraction * static_cast<double>(d) - 1e-9)), 1, d);
  order.resize(static_cast<std::size_t>(count));
  return order;
}

// ---------------------------------------------------------------------------
// Driver

struct ViewSelection {
  IndexList ranking;  // every feature, best first
  Vector scores;      // row norms of W, indexed by feature
  IndexList selected; // top ceil(select_fraction * d)
};

struct SelectionResult {
  std::vector<ViewSelection> views;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
  std::vector<Matrix> W;
  std::vector<Matrix> similarity;  // final S per view
  std::vector<Matrix> completed;  // solver space (standardized when enabled)
  std::vector<Matrix> imputed;    // missing rows, original units
  std::vector<IndexList> missing;
  std::vector<Vector> sample_weights;
  std::vector<int> sylvester_iterations;
  std::vector<Index> safeguarded_rows;  // S rows not taken from the auto-tuned closed form
  Standardization standardization;
  SolverConfig config;
};

/// Called after every outer iteration with the iteration number (1-based).
using IterationObserver = std::function<void(const SolverState&, int)>;

/// Initial state: D = I, e = 1/n (1 when sample weights are disabled),
/// missing rows at the observed column means, S from the k-NN graph of the
/// mean-filled data, W = 0 until the first update.
inline SolverState initialize_state(const MultiViewDataset& ds, const SolverConfig& config) {
  validate(ds);
  config.validate(ds.num_samples(), ds.num_views());
  const Index n = ds.num_samples();
  const auto blocks = mean_initialize_missing(ds);
  SolverState state;
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    ViewState view;
    view.indicators = build_indicators(ds.masks[v]);
    view.observed = gather_rows(ds.views[v], view.indicators.observed_rows);
    view.missing = blocks[v];
    view.reassemble();
    const Index d = ds.views[v].cols();
    view.W = Matrix::Zero(d, d);
    view.D = Vector::Ones(d);
    view.e = config.ablation == Ablation::no_sample_weights
                 ? Vector::Ones(n)
                 : Vector::Constant(n, 1.0 / static_cast<double>(n));
    view.graph = initial_knn_graph(view.Xt, config.k);
    view.laplacian = laplacian(view.graph);
    state.views.push_back(std::move(view));
  }
  return state;
}

/// One outer iteration over every view. With `check`, the objective is
/// re-evaluated after each step and any increase past the slack throws.
inline void iterate_once(SolverState& state, const SolverConfig& config) {
  ++state.iteration;
  const int it = state.iteration;
  // Before the first W step the objective is undefined (no W yet), so the
  // chain of checks starts after it.
  std::optional<double> last;
  if (!state.trace.empty()) last = state.trace.back();
  auto checkpoint = [&](const char* step) {
    if (!config.check_monotone) return;
    const double now = objective_value(state, config);
    if (last && now - *last > config.monotone_slack * std::max(std::abs(*last), 1.0))
      throw NumericalError("objective increased at iteration " + std::to_string(it) + " step '" +
                           step + "': " + std::to_string(*last) + " -> " + std::to_string(now));
    last = now;
  };

  for (std::size_t v = 0; v < state.views.size(); ++v) {
    auto& view = state.views[v];
    view.W = update_W(view.Xt, view.e, view.laplacian.L, view.D,
                      config.alpha_for(static_cast<Index>(v)), config.lambda);
  }
  checkpoint("W");
  for (auto& view : state.views) view.D = update_D(view.W, config.eps);

  if (config.ablation != Ablation::no_imputation) {
    for (std::size_t v = 0; v < state.views.size(); ++v) {
      try {
        update_missing_block(state.views[v], config.alpha_for(static_cast<Index>(v)), config.sylvester);
      } catch (const NumericalError& e) {
        throw NumericalError("view " + std::to_string(v) + " missing-block update: " + e.what());
      }
    }
    checkpoint("missing-block");
  }

  for (auto& view : state.views) {
    if (config.xi_safeguard) {
      RefreshStats stats;
      view.graph = refresh_similarity(view.Xt, view.W, view.graph, &stats);
      view.safeguarded_rows += stats.previous_xi + stats.kept;
    } else {
      view.graph = update_similarity(view.Xt, view.W, config.k);
    }
    view.laplacian = laplacian(view.graph);
  }
  checkpoint("S");

  if (config.ablation != Ablation::no_sample_weights) {
    for (auto& view : state.views) view.e = update_sample_weights(view.Xt, view.W, config.gamma);
    checkpoint("e");
  }
}

inline SelectionResult run(const MultiViewDataset& dataset, const SolverConfig& config,
                           const IterationObserver& observer = {}) {
  validate(dataset);
  config.validate(dataset.num_samples(), dataset.num_views());

  SelectionResult result;
  result.config = config;
  result.missing = missing_indices(dataset);
  MultiViewDataset working = dataset;
  if (config.standardize) {
    std::tie(working, result.standardization) = standardize(dataset);
  } else {
    for (const auto& X : dataset.views) {
      result.standardization.mean.push_back(Vector::Zero(X.cols()));
      result.standardization.scale.push_back(Vector::Ones(X.cols()));
    }
  }

  SolverState state = initialize_state(working, config);
  double previous = 0.0;
  for (int t = 1; t <= config.max_iter; ++t) {
    try {
      iterate_once(state, config);
    } catch (const NumericalError& e) {
      throw NumericalError("iteration " + std::to_string(t) + ": " + e.what());
    }
    const double f = objective_value(state, config);
    state.trace.push_back(f);
    if (observer) observer(state, t);
    if (t > 1) {
      if (config.check_monotone &&
          f - previous > config.monotone_slack * std::max(std::abs(previous), 1.0))
        throw NumericalError("objective increased between iterations " + std::to_string(t - 1) +
                             " and " + std::to_string(t));
      if (std::abs(f - previous) / std::max(std::abs(previous), 1.0) < config.tol) {
        result.converged = true;
        previous = f;
        break;
      }
    }
    previous = f;
  }

  result.iterations = state.iteration;
  result.objective_trace = state.trace;
  for (std::size_t v = 0; v < state.views.size(); ++v) {
    const auto& view = state.views[v];
    ViewSelection sel;
    sel.scores = view.W.rowwise().norm();
    sel.ranking = rank_features(view.W, 1.0);
    sel.selected = rank_features(view.W, config.select_fraction);
    result.views.push_back(std::move(sel));
    result.W.push_back(view.W);
    result.similarity.push_back(view.graph.S);
    result.completed.push_back(view.Xt);
    const auto& mean = result.standardization.mean[v];
    const auto& scale = result.standardization.scale[v];
    Matrix original = view.missing;
    for (Index r = 0; r < original.rows(); ++r)
      original.row(r) = (view.missing.row(r).transpose().array() * scale.array() + mean.array())
                            .matrix()
                            .transpose();
    result.imputed.push_back(std::move(original));
    result.sample_weights.push_back(view.e);
    result.sylvester_iterations.push_back(view.sylvester_iterations);
    result.safeguarded_rows.push_back(view.safeguarded_rows);
  }
  return result;
}

}  // namespace unifier
