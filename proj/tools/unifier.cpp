// Command-line front end: gen-synthetic, mask, select, evaluate, sweep.
//
// Exit codes: 0 success, 2 bad input or parameters, 3 solver hit max_iter
// without converging (outputs are still written), 4 numerical failure.

#include "unifier/data.hpp"
#include "unifier/eval.hpp"
#include "unifier/graph.hpp"
#include "unifier/io.hpp"
#include "unifier/solver.hpp"
#include "unifier/synthetic.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using namespace unifier;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 2;
constexpr int kNotConverged = 3;
constexpr int kNumericalError = 4;

std::string format_double(double x) {
  std::string s;
  detail::append_double(s, x);
  return s;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw InputError("cannot write " + file.string());
  out << text;
}

// Writes to a sibling temp file first so readers never see a partial file.
void write_json_atomic(const fs::path& file, const Json& j) {
  const fs::path tmp = file.string() + ".tmp";
  write_json_file(tmp, j);
  fs::rename(tmp, file);
}

// ---------------------------------------------------------------------------
// Shared run logic

struct RunOutcome {
  MultiViewDataset dataset;  // original units, masked
  MaskSpec mask;
  SelectionResult result;
};

RunOutcome execute(const RunConfig& rc) {
  RunOutcome out;
  out.dataset = load_dataset(rc.manifest);
  out.mask.missing = missing_indices(out.dataset);
  if (rc.mask_ratio > 0.0) {
    if (!out.dataset.complete())
      throw InputError("the manifest already carries a mask; set mask.ratio to 0 or use a complete manifest");
    std::tie(out.dataset, out.mask) = apply_mask(out.dataset, rc.mask_ratio, rc.mask_seed.value_or(rc.seed));
  }
  out.result = run(out.dataset, rc.solver);
  return out;
}

int resolve_clusters(const RunConfig& rc, const MultiViewDataset& ds) {
  if (rc.evaluation.clusters > 0) return rc.evaluation.clusters;
  if (!ds.labels) throw InputError("evaluation needs ground-truth labels; add a \"labels\" file to the manifest");
  return distinct_labels(*ds.labels);
}

std::string trace_csv(const std::vector<double>& trace) {
  std::string s = "iteration,objective\n";
  for (std::size_t t = 0; t < trace.size(); ++t) s += std::to_string(t + 1) + "," + format_double(trace[t]) + "\n";
  return s;
}

void write_select_outputs(const RunConfig& rc, const RunOutcome& out) {
  fs::create_directories(rc.output_dir);
  write_json_file(rc.output_dir / "result.json", to_json(out.result, rc, out.mask));
  write_text(rc.output_dir / "trace.csv", trace_csv(out.result.objective_trace));
  const auto& ds = out.dataset;
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const std::string& name = ds.names[v];
    if (rc.write_imputed) {
      const auto k = build_indicators(ds.masks[v]);
      write_matrix_csv(rc.output_dir / ("imputed_" + name + ".csv"),
                       assemble(k, gather_rows(ds.views[v], k.observed_rows), out.result.imputed[v]));
    }
    if (rc.dump_graphs) {
      SimilarityGraph g{out.result.similarity[v], rc.solver.k, Vector()};
      write_matrix_csv(rc.output_dir / ("graph_" + name + "_S.csv"), g.S);
      write_matrix_csv(rc.output_dir / ("graph_" + name + "_L.csv"), laplacian(g).L);
    }
  }
}

void print_summary(const RunOutcome& out) {
  const auto& r = out.result;
  std::cout << "iterations " << r.iterations << (r.converged ? " (converged)" : " (max_iter reached)")
            << ", objective " << format_double(r.objective_trace.back()) << "\n";
  for (std::size_t v = 0; v < r.views.size(); ++v) {
    std::cout << out.dataset.names[v] << ": selected";
    for (Index j : r.views[v].selected) std::cout << ' ' << j;
    std::cout << "\n";
  }
}

// ---------------------------------------------------------------------------
// Solver overrides shared by `select`

struct Overrides {
  std::vector<double> alpha;
  double lambda = 0, gamma = 0, eps = 0, tol = 0, fraction = 0, syl_tol = 0, ridge = 0, mask_ratio = 0;
  int k = 0, max_iter = 0, syl_max_iter = 0;
  std::string ablation, output_dir;
  std::uint64_t seed = 0;
  bool no_standardize = false, write_imputed = false, dump_graphs = false, no_safeguard = false;
  std::vector<CLI::Option*> options;

  void attach(CLI::App* app) {
    auto add = [&](const std::string& flag, auto& target, const std::string& help) {
      options.push_back(app->add_option(flag, target, help));
      return options.back();
    };
    add("--alpha", alpha, "Reconstruction weight; one value or one per view (default 1)")->delimiter(',');
    add("--lambda", lambda, "Row-sparsity weight (default 1)");
    add("--gamma", gamma, "Robustness scale of the sample weights (default 1)");
    add("--k", k, "Neighbours per sample (default 5)");
    add("--eps", eps, "Row-norm smoothing (default 1e-8)");
    add("--max-iter", max_iter, "Outer iteration cap (default 100)");
    add("--tol", tol, "Relative objective change for convergence (default 1e-5)");
    add("--select-fraction", fraction, "Fraction of features kept per view (default 0.4)");
    add("--ablation", ablation, "full | no_imputation | no_sample_weights");
    add("--seed", seed, "Master seed for masking and k-means (default 0)");
    add("--mask-ratio", mask_ratio, "Mask a complete dataset at this ratio before solving");
    add("--sylvester-tol", syl_tol, "CG relative residual target (default 1e-10)");
    add("--sylvester-max-iter", syl_max_iter, "CG iteration cap (default 500)");
    add("--ridge", ridge, "Fixed CG ridge (default 1e-8 ||F|| / (m d))");
    add("--output-dir", output_dir, "Output folder (default: config's output_dir)");
    options.push_back(app->add_flag("--no-standardize", no_standardize, "Solve on raw feature scales"));
    options.push_back(app->add_flag("--no-xi-safeguard", no_safeguard, "Always take the auto-tuned S rows"));
    options.push_back(app->add_flag("--write-imputed", write_imputed, "Write completed views as CSV"));
    options.push_back(app->add_flag("--dump-graphs", dump_graphs, "Write final S and L per view"));
  }

  void apply(RunConfig& rc) const {
    auto given = [&](const char* name) {
      for (auto* o : options)
        if (o->check_name(name) && o->count() > 0) return true;
      return false;
    };
    auto& s = rc.solver;
    if (given("--alpha")) s.alpha = alpha;
    if (given("--lambda")) s.lambda = lambda;
    if (given("--gamma")) s.gamma = gamma;
    if (given("--k")) s.k = k;
    if (given("--eps")) s.eps = eps;
    if (given("--max-iter")) s.max_iter = max_iter;
    if (given("--tol")) s.tol = tol;
    if (given("--select-fraction")) s.select_fraction = fraction;
    if (given("--ablation")) s.ablation = parse_ablation(ablation);
    if (given("--seed")) rc.seed = seed;
    s.seed = rc.seed;
    if (given("--mask-ratio")) rc.mask_ratio = mask_ratio;
    if (given("--sylvester-tol")) s.sylvester.tol = syl_tol;
    if (given("--sylvester-max-iter")) s.sylvester.max_iter = syl_max_iter;
    if (given("--ridge")) s.sylvester.ridge = ridge;
    if (given("--output-dir")) rc.output_dir = output_dir;
    if (no_standardize) s.standardize = false;
    if (no_safeguard) s.xi_safeguard = false;
    if (write_imputed) rc.write_imputed = true;
    if (dump_graphs) rc.dump_graphs = true;
    // Round-trip through the strict parser so CLI values get the same checks.
    rc = run_config_from_json(to_json(rc));
  }
};

// ---------------------------------------------------------------------------
// Subcommands

struct GenArgs {
  SyntheticSpec spec;
  std::string out;
};

int cmd_gen_synthetic(const GenArgs& a) {
  const auto ds = generate_synthetic(a.spec);
  const fs::path out(a.out);
  fs::create_directories(out);
  Json views = Json::array();
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    const std::string file = ds.names[v] + ".csv";
    write_matrix_csv(out / file, ds.views[v]);
    views.push_back({{"name", ds.names[v]}, {"path", file}});
  }
  write_labels_csv(out / "labels.csv", *ds.labels);
  write_json_file(out / "manifest.json", {{"views", views}, {"labels", "labels.csv"}});
  const auto& s = a.spec;
  write_json_file(out / "generator.json",
                  {{"samples", s.samples},
                   {"dims", s.dims},
                   {"informative", s.informative},
                   {"clusters", s.clusters},
                   {"latent", s.latent},
                   {"separation", s.separation},
                   {"signal_noise", s.signal_noise},
                   {"feature_noise", s.feature_noise},
                   {"outlier_fraction", s.outlier_fraction},
                   {"outlier_scale", s.outlier_scale},
                   {"seed", s.seed}});
  std::cout << "wrote " << ds.views.size() << " views of " << s.samples << " samples to " << out.string() << "\n";
  return kOk;
}

struct MaskArgs {
  std::string manifest, out;
  double ratio = 0.2;
  std::uint64_t seed = 0;
};

int cmd_mask(const MaskArgs& a) {
  if (a.ratio == 0.0) std::cerr << "warning: ratio 0 leaves every view complete\n";
  const fs::path manifest_path(a.manifest), out(a.out);
  const auto ds = load_dataset(manifest_path);
  const auto [masked, spec] = apply_mask(ds, a.ratio, a.seed);
  fs::create_directories(out);
  write_mask_csv(out / "mask.csv", spec.missing);

  // Same views and labels, paths rewritten relative to the output folder.
  Json manifest = read_json_file(manifest_path);
  const fs::path base = fs::absolute(manifest_path).parent_path();
  const fs::path target = fs::absolute(out);
  auto rebase = [&](const std::string& p) {
    fs::path path(p);
    if (!path.is_absolute()) path = base / path;
    return fs::relative(path, target).generic_string();
  };
  for (auto& v : manifest["views"]) v["path"] = rebase(v["path"].get<std::string>());
  if (manifest.contains("labels") && !manifest["labels"].is_null())
    manifest["labels"] = rebase(manifest["labels"].get<std::string>());
  manifest["mask"] = "mask.csv";
  write_json_file(out / "manifest.json", manifest);

  Json counts = Json::array();
  for (const auto& m : spec.missing) counts.push_back(m.size());
  write_json_file(out / "mask_provenance.json",
                  {{"source_manifest", a.manifest},
                   {"ratio", spec.ratio},
                   {"seed", spec.seed},
                   {"samples", masked.num_samples()},
                   {"missing_per_view", counts}});
  std::cout << "masked " << format_double(a.ratio) << " of " << masked.num_samples()
            << " samples per view; wrote " << (out / "mask.csv").string() << "\n";
  return kOk;
}

int cmd_select(const std::string& config, const Overrides& overrides) {
  RunConfig rc = load_run_config(config);
  overrides.apply(rc);
  const auto out = execute(rc);
  write_select_outputs(rc, out);
  print_summary(out);
  if (!out.result.converged) {
    std::cerr << "warning: no convergence within " << rc.solver.max_iter << " iterations\n";
    return kNotConverged;
  }
  return kOk;
}

struct EvalArgs {
  std::string result, out;
  std::vector<double> fractions;
  int clusters = 0, restarts = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_evaluate(const EvalArgs& a) {
  const Json doc = read_json_file(a.result);
  const auto rc = run_config_from_json(doc.at("config"));
  const auto [ds, selection] = selection_from_json(doc);
  const auto fractions = a.fractions.empty() ? rc.evaluation.fractions : a.fractions;
  const int clusters = a.clusters > 0 ? a.clusters : resolve_clusters(rc, ds);
  const int restarts = a.restarts > 0 ? a.restarts : rc.evaluation.restarts;
  const std::uint64_t seed = a.seed_given ? a.seed : rc.seed;

  Json records = Json::array();
  std::cout << "fraction  acc       nmi\n";
  for (double f : fractions) {
    const auto o = evaluate_selection(ds, selection, clusters, restarts, seed, f);
    records.push_back(metrics_record(o, clusters, seed, f));
    std::printf("%-9.3g %-9.4f %.4f\n", f, o.acc, o.nmi);
  }
  const fs::path out = a.out.empty() ? fs::path(a.result).parent_path() / "metrics.json" : fs::path(a.out);
  write_json_file(out, {{"result", a.result}, {"records", records}, {"config", doc.at("config")}});
  return kOk;
}

struct SweepArgs {
  std::string config, out;
  std::vector<double> alphas, lambdas, fractions, ratios;
  int workers = 1;
};

struct Cell {
  std::string id;
  double alpha, lambda, fraction, ratio;
};

Json run_cell(const RunConfig& base, const Cell& cell) {
  Json rec = {{"cell", cell.id},
              {"alpha", cell.alpha},
              {"lambda", cell.lambda},
              {"fraction", cell.fraction},
              {"ratio", cell.ratio}};
  RunConfig rc = base;
  rc.solver.alpha = {cell.alpha};
  rc.solver.lambda = cell.lambda;
  rc.solver.select_fraction = cell.fraction;
  rc.mask_ratio = cell.ratio;
  rec["config"] = to_json(rc);
  try {
    const auto out = execute(rc);
    const int clusters = resolve_clusters(rc, out.dataset);
    const auto o = evaluate_selection(out.dataset, out.result, clusters, rc.evaluation.restarts, rc.seed);
    rec["status"] = "ok";
    rec["acc"] = o.acc;
    rec["nmi"] = o.nmi;
    rec["clusters"] = clusters;
    rec["iterations"] = out.result.iterations;
    rec["converged"] = out.result.converged;
    rec["objective"] = out.result.objective_trace.back();
  } catch (const NumericalError& e) {
    rec["status"] = "failed";
    rec["error_kind"] = "numerical";
    rec["error"] = e.what();
  } catch (const InputError& e) {
    rec["status"] = "failed";
    rec["error_kind"] = "input";
    rec["error"] = e.what();
  }
  return rec;
}

int cmd_sweep(const SweepArgs& a) {
  RunConfig base = load_run_config(a.config);
  auto or_default = [](const std::vector<double>& v, double d) { return v.empty() ? std::vector<double>{d} : v; };
  const auto alphas = or_default(a.alphas, base.solver.alpha.front());
  const auto lambdas = or_default(a.lambdas, base.solver.lambda);
  const auto fractions = or_default(a.fractions, base.solver.select_fraction);
  const auto ratios = or_default(a.ratios, base.mask_ratio);
  if (a.workers < 1) throw ParameterError("workers must be at least 1");

  std::vector<Cell> cells;
  for (std::size_t i = 0; i < alphas.size(); ++i)
    for (std::size_t j = 0; j < lambdas.size(); ++j)
      for (std::size_t f = 0; f < fractions.size(); ++f)
        for (std::size_t r = 0; r < ratios.size(); ++r)
          cells.push_back({"a" + std::to_string(i) + "_l" + std::to_string(j) + "_f" + std::to_string(f) + "_r" +
                               std::to_string(r),
                           alphas[i], lambdas[j], fractions[f], ratios[r]});

  const fs::path out(a.out), markers = out / "cells";
  fs::create_directories(markers);
  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0}, skipped{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      const fs::path marker = markers / (cells[c].id + ".json");
      if (fs::exists(marker)) {
        ++skipped;
        continue;
      }
      const Json rec = run_cell(base, cells[c]);
      write_json_atomic(marker, rec);
      std::lock_guard lock(log_mutex);
      std::cerr << "[" << ++done << "] " << cells[c].id << " " << rec["status"].get<std::string>() << "\n";
    }
  };
  std::vector<std::thread> pool;
  const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(a.workers), cells.size());
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::string lines;
  int failed = 0;
  for (const auto& cell : cells) {
    const Json rec = read_json_file(markers / (cell.id + ".json"));
    if (rec.at("status") != "ok") ++failed;
    lines += rec.dump() + "\n";
  }
  write_text(out / "sweep.jsonl", lines);
  std::cout << cells.size() << " cells (" << skipped << " resumed), " << failed << " failed; wrote "
            << (out / "sweep.jsonl").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint imputation and unsupervised feature selection for incomplete multi-view data"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a planted-cluster multi-view dataset");
  gen_cmd->add_option("--out", gen.out, "Output folder")->required();
  gen_cmd->add_option("--samples", gen.spec.samples, "Samples")->capture_default_str();
  gen_cmd->add_option("--dims", gen.spec.dims, "Features per view")->delimiter(',')->capture_default_str();
  gen_cmd->add_option("--informative", gen.spec.informative, "Informative features per view (listed first)")
      ->delimiter(',')
      ->capture_default_str();
  gen_cmd->add_option("--clusters", gen.spec.clusters, "Clusters")->capture_default_str();
  gen_cmd->add_option("--latent", gen.spec.latent, "Latent code dimension")->capture_default_str();
  gen_cmd->add_option("--separation", gen.spec.separation, "Cluster code spread")->capture_default_str();
  gen_cmd->add_option("--signal-noise", gen.spec.signal_noise, "Noise on informative features")->capture_default_str();
  gen_cmd->add_option("--feature-noise", gen.spec.feature_noise, "Std of noise features")->capture_default_str();
  gen_cmd->add_option("--outlier-fraction", gen.spec.outlier_fraction, "Fraction of outlier rows")->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "Seed")->capture_default_str();

  MaskArgs mask;
  auto* mask_cmd = app.add_subcommand("mask", "Remove a fraction of samples per view");
  mask_cmd->add_option("--manifest", mask.manifest, "Manifest of a complete dataset")->required();
  mask_cmd->add_option("--ratio", mask.ratio, "Fraction of samples removed per view, in [0, 0.9]")->capture_default_str();
  mask_cmd->add_option("--seed", mask.seed, "Seed")->capture_default_str();
  mask_cmd->add_option("--out", mask.out, "Output folder")->required();

  std::string select_config;
  Overrides overrides;
  auto* select_cmd = app.add_subcommand("select", "Impute missing views and rank features");
  select_cmd->add_option("--config", select_config, "Run config JSON")->required();
  overrides.attach(select_cmd);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Cluster on selected features and score against labels");
  eval_cmd->add_option("--result", eval.result, "result.json written by select")->required();
  eval_cmd->add_option("--fractions", eval.fractions, "Selected fractions (default: config, 0.1..0.5)")->delimiter(',');
  eval_cmd->add_option("--clusters", eval.clusters, "Clusters (default: number of distinct labels)");
  eval_cmd->add_option("--restarts", eval.restarts, "k-means restarts (default 30)");
  auto* seed_opt = eval_cmd->add_option("--seed", eval.seed, "k-means seed (default: run seed)");
  eval_cmd->add_option("--out", eval.out, "Metrics JSON (default: metrics.json next to the result)");

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid over alpha, lambda, selected fraction and missing ratio");
  sweep_cmd->add_option("--config", sweep.config, "Base run config JSON")->required();
  sweep_cmd->add_option("--alphas", sweep.alphas, "alpha grid")->delimiter(',');
  sweep_cmd->add_option("--lambdas", sweep.lambdas, "lambda grid")->delimiter(',');
  sweep_cmd->add_option("--fractions", sweep.fractions, "select_fraction grid")->delimiter(',');
  sweep_cmd->add_option("--ratios", sweep.ratios, "missing ratio grid")->delimiter(',');
  sweep_cmd->add_option("--workers", sweep.workers, "Parallel cells")->capture_default_str();
  sweep_cmd->add_option("--out", sweep.out, "Output folder (resumable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*gen_cmd) return cmd_gen_synthetic(gen);
    if (*mask_cmd) return cmd_mask(mask);
    if (*select_cmd) return cmd_select(select_config, overrides);
    if (*eval_cmd) {
      eval.seed_given = seed_opt->count() > 0;
      return cmd_evaluate(eval);
    }
    if (*sweep_cmd) return cmd_sweep(sweep);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
