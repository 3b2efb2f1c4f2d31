// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "oracles.hpp"

#include "unifier/eval.hpp"
#include "unifier/io.hpp"
#include "unifier/solver.hpp"
#include "unifier/synthetic.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

using namespace unifier;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c);
  return buf;
}

const fs::path kData = UNIFIER_DATA_DIR;

// Observed rows of the completed views must equal the (standardized) input at
// every iteration; shared by the criteria that run the solver.
struct PreservationLog {
  long checks = 0;
  long violations = 0;

  IterationObserver observer(const MultiViewDataset& input, const SolverConfig& cfg) {
    auto reference = std::make_shared<MultiViewDataset>(cfg.standardize ? standardize(input).first : input);
    return [this, reference](const SolverState& state, int) {
      for (std::size_t v = 0; v < state.views.size(); ++v) {
        const auto& view = state.views[v];
        for (Index i : view.indicators.observed_rows) {
          ++checks;
          for (Index j = 0; j < view.Xt.cols(); ++j)
            if (view.Xt(i, j) != reference->views[v](i, j)) {
              ++violations;
              break;
            }
        }
      }
    };
  }
};

PreservationLog preservation;

Verdict convergence() {
  const auto rc = load_run_config(kData / "run.json");
  auto cfg = rc.solver;
  cfg.max_iter = 20;
  cfg.tol = 1e-4;
  const auto start = std::chrono::steady_clock::now();
  const auto [ds, mask] = apply_mask(load_dataset(rc.manifest), rc.mask_ratio, rc.seed);
  const auto result = run(ds, cfg, preservation.observer(ds, cfg));
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& t = result.objective_trace;
  bool monotone = true;
  int below = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] - t[i - 1] > 1e-9 * std::max(std::abs(t[i - 1]), 1.0)) monotone = false;
    if (!below && std::abs(t[i] - t[i - 1]) / std::max(std::abs(t[i - 1]), 1.0) < 1e-4) below = static_cast<int>(i + 1);
  }
  Verdict v;
  v.pass = ds.num_samples() == 60 && monotone && below > 0 && below <= 20 && seconds < 10.0;
  v.detail = "monotone=" + std::string(monotone ? "yes" : "no") + ", rel change < 1e-4 at iteration " +
             std::to_string(below) + fmt(", %.3f s", seconds);
  return v;
}

Verdict sylvester_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 6);
  double worst_gap = 0.0, worst_residual = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index m = size(rng), d = size(rng);
    SylvesterSystem sys;
    const Matrix G = oracle::random_matrix(rng, m, m);
    sys.A = G * G.transpose();  // PSD, like a Laplacian block
    const Matrix W = oracle::random_matrix(rng, d, d, 0.5);
    sys.B = W * W.transpose();
    const Matrix IW = Matrix::Identity(d, d) - W;
    sys.Q = IW * IW.transpose();
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Vector p(m);
    for (Index i = 0; i < m; ++i) p(i) = u(rng);
    sys.P = p.asDiagonal();
    sys.F = oracle::random_matrix(rng, m, d);
    const auto cg = solve_cg(sys, 1e-12, 5000);
    const auto dense = solve_dense(sys);
    worst_gap = std::max(worst_gap, (cg.X - dense.X).norm() / dense.X.norm());
    worst_residual = std::max(worst_residual, (apply_operator(sys, cg.X) - sys.F).norm() / std::max(sys.F.norm(), 1.0));
  }
  return {worst_gap <= 1e-6 && worst_residual <= 1e-8,
          fmt("50 systems, max relative gap %.2e, max residual %.2e", worst_gap, worst_residual)};
}

Verdict s_update_optimality() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  bool sparsity = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 5 + trial % 4;  // 5..8 samples
    const Matrix B = half_squared_distances(oracle::random_matrix(rng, n, 3));
    const Index self = trial % n;
    Vector b = B.row(self).transpose(), rest(n - 1);
    for (Index j = 0, t = 0; j < n; ++j)
      if (j != self) rest(t++) = b(j);
    for (int k : {1, 2, 3}) {
      const auto row = similarity_row(b, self, k);
      Vector s = Vector::Zero(n);
      for (std::size_t t = 0; t < row.neighbors.size(); ++t) s(row.neighbors[t]) = row.weights[t];
      Vector s_rest(n - 1);
      for (Index j = 0, t = 0; j < n; ++j)
        if (j != self) s_rest(t++) = s(j);
      const auto best = oracle::simplex_qp_bruteforce(rest, row.xi);
      worst = std::max({worst, (s_rest - best.s).cwiseAbs().maxCoeff(),
                        std::abs(b.dot(s) + row.xi * s.squaredNorm() - best.value)});
      if ((s_rest.array() > 0.0).count() != k || s(self) != 0.0) sparsity = false;
    }
  }
  return {worst <= 1e-8 && sparsity,
          fmt("60 rows, max deviation from brute force %.2e", worst) + (sparsity ? ", exactly k nonzeros" : ", WRONG support")};
}

Verdict e_update_optimality() {
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> ex(0.3);
  double worst = -std::numeric_limits<double>::infinity();
  for (double gamma : {0.1, 1.0, 10.0})
    for (int trial = 0; trial < 100; ++trial) {
      const double r = ex(rng);
      Matrix X(1, 1), W = Matrix::Zero(1, 1);
      X << std::sqrt(r);
      const double e = update_sample_weights(X, W, gamma)(0);
      auto f = [&](double x) { return x * r + gamma * (std::sqrt(x) - 1.0) * (std::sqrt(x) - 1.0); };
      double grid = std::numeric_limits<double>::infinity();
      for (int g = 1; g <= 10000; ++g) grid = std::min(grid, f(g / 10000.0));
      worst = std::max(worst, f(e) - grid);
    }
  Matrix X(1, 1), W = Matrix::Zero(1, 1);
  X << 1.0;
  const double example = update_sample_weights(X, W, 1.0)(0);
  return {worst <= 1e-12 && example == 0.25,
          fmt("300 residuals, max(closed - grid) %.2e, e(gamma=1, r=1) = %.17g", worst, example)};
}

Verdict w_update() {
  std::mt19937_64 rng(31);
  double worst_stationary = 0.0, worst_fd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 8 + trial % 5, d = 3 + trial % 4;
    const Matrix X = oracle::random_matrix(rng, n, d);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Vector e(n), D(d);
    for (Index i = 0; i < n; ++i) e(i) = u(rng);
    for (Index j = 0; j < d; ++j) D(j) = u(rng);
    const Matrix L = laplacian(initial_knn_graph(X, 3)).L;
    const double alpha = 0.5 + trial % 3, lambda = 0.25 * (1 + trial % 4);

    const Matrix W = update_W(X, e, L, D, alpha, lambda);
    const Matrix rhs = alpha * X.transpose() * e.asDiagonal() * X;
    Matrix lhs = rhs + X.transpose() * L * X;
    lhs.diagonal() += lambda * D;
    worst_stationary = std::max(worst_stationary, (lhs * W - rhs).norm() / rhs.norm());

    const Matrix probe = oracle::random_matrix(rng, d, d);
    auto f = [&](const Matrix& V) { return w_subproblem_objective(X, e, L, D, V, alpha, lambda); };
    const Matrix numeric = oracle::numeric_gradient(f, probe);
    const Matrix analytic = w_subproblem_gradient(X, e, L, D, probe, alpha, lambda);
    worst_fd = std::max(worst_fd, (numeric - analytic).norm() / analytic.norm());
  }
  return {worst_stationary <= 1e-8 && worst_fd <= 1e-5,
          fmt("20 instances, stationarity %.2e, gradient vs finite differences %.2e", worst_stationary, worst_fd)};
}

Verdict ablation_directionality() {
  // Protocol fixed in advance: 60 samples, 3 clusters, 2 views of 5
  // informative + 45 noise features, 20% missing, seeds 0-9, alpha = lambda
  // = 1, k = 5, 10% of features kept, k-means with 30 restarts.
  double nmi[3] = {0, 0, 0};
  int recovered = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticSpec spec;
    spec.samples = 60;
    spec.dims = {50, 50};
    spec.informative = {5, 5};
    spec.clusters = 3;
    spec.seed = seed;
    const auto [ds, mask] = apply_mask(generate_synthetic(spec), 0.2, seed);
    for (int a = 0; a < 3; ++a) {
      SolverConfig cfg;
      cfg.select_fraction = 0.1;
      cfg.ablation = static_cast<Ablation>(a);
      const auto result = run(ds, cfg, preservation.observer(ds, cfg));
      nmi[a] += evaluate_selection(ds, result, 3, 30, seed).nmi / 10.0;
      if (a == 0) {
        bool all_views = true;
        for (const auto& view : result.views) {
          int planted = 0;
          for (int j = 0; j < 10; ++j) planted += view.ranking[static_cast<std::size_t>(j)] < 5;
          all_views = all_views && planted >= 4;
        }
        recovered += all_views;
      }
    }
  }
  return {nmi[0] >= nmi[1] && nmi[0] >= nmi[2] && recovered >= 8,
          fmt("mean NMI full %.4f, no_imputation %.4f, no_sample_weights %.4f", nmi[0], nmi[1], nmi[2]) +
              ", top-10 has >= 4 planted features in every view on " + std::to_string(recovered) + "/10 seeds"};
}

Verdict observed_preservation() {
  // Extra runs covering each ablation and a per-view alpha, on top of the
  // runs made by the other criteria.
  for (int a = 0; a < 3; ++a) {
    SyntheticSpec spec;
    spec.samples = 40;
    spec.seed = 100 + static_cast<std::uint64_t>(a);
    const auto ds = apply_mask(generate_synthetic(spec), 0.3, spec.seed).first;
    SolverConfig cfg;
    cfg.ablation = static_cast<Ablation>(a);
    cfg.alpha = {0.5, 2.0};
    cfg.standardize = a != 1;
    run(ds, cfg, preservation.observer(ds, cfg));
  }
  return {preservation.checks > 0 && preservation.violations == 0,
          std::to_string(preservation.checks) + " observed-row checks across all iterations, " +
              std::to_string(preservation.violations) + " changed"};
}

Verdict metrics() {
  const Labels pred{0, 0, 1, 1}, truth{0, 1, 1, 1};
  const double acc = accuracy(pred, truth), brute = oracle::accuracy_bruteforce(pred, truth);
  const double independent = nmi({0, 0, 1, 1}, {0, 1, 0, 1});
  bool invariant = true;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    Labels a(30), b(30);
    for (auto& x : a) x = label(rng);
    for (auto& x : b) x = label(rng);
    Labels permuted(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) permuted[i] = (a[i] * 3 + 1) % 4;  // bijection on {0..3}
    invariant = invariant && std::abs(accuracy(permuted, b) - accuracy(a, b)) < 1e-15 &&
                std::abs(nmi(permuted, b) - nmi(a, b)) < 1e-14;
  }
  return {acc == 0.75 && brute == 0.75 && std::abs(independent) < 1e-15 && invariant,
          fmt("ACC %.4g (bijection enumeration %.4g), NMI of independent partition %.2g", acc, brute, independent) +
              (invariant ? ", permutation invariant" : ", NOT permutation invariant")};
}

int shell(const std::string& args) {
  const std::string cmd = std::string(UNIFIER_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) {
      std::ifstream in(entry.path(), std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      files[fs::relative(entry.path(), dir).string()] = ss.str();
    }
  return files;
}

Verdict cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "unifier_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream(dir / "run.json") << R"({"manifest": "data/manifest.json", "mask": {"ratio": 0.2}, "seed": 7,
                                            "output_dir": "out", "evaluation": {"restarts": 10}})";
  }
  const std::string d = dir.string();
  const std::vector<std::string> commands = {
      "gen-synthetic --out " + d + "/data --samples 40 --dims 8,6 --informative 3,3 --seed 7",
      "mask --manifest " + d + "/data/manifest.json --ratio 0.25 --seed 7 --out " + d + "/masked",
      "select --config " + d + "/run.json --write-imputed --dump-graphs",
      "evaluate --result " + d + "/out/result.json",
      "sweep --config " + d + "/run.json --alphas 0.1,1 --lambdas 1 --fractions 0.2,0.4 --workers 3 --out " + d + "/sweep",
  };
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    if (pass == 1) fs::remove_all(dir / "sweep");  // a fresh sweep, not a resume
    for (const auto& c : commands)
      if (shell(c) != 0) return {false, "command failed: " + c};
    auto snap = snapshot(dir);
    if (pass == 0) {
      first = std::move(snap);
      continue;
    }
    for (const auto& [name, bytes] : first)
      if (snap[name] != bytes) return {false, name + " differs between runs"};
    return {snap.size() == first.size(), std::to_string(first.size()) + " output files byte-identical across reruns of all 5 commands"};
  }
  return {false, "unreachable"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"convergence on bundled data", convergence},
      {"sylvester oracle equivalence", sylvester_equivalence},
      {"S-update optimality", s_update_optimality},
      {"e-update optimality", e_update_optimality},
      {"W-update correctness", w_update},
      {"ablation directionality", ablation_directionality},
      {"observed-data preservation", observed_preservation},
      {"metric correctness", metrics},
      {"CLI determinism", cli_determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
