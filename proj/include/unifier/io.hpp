#pragma once

// JSON forms of run configurations, selection results and metrics.

#include "unifier/common.hpp"
#include "unifier/data.hpp"
#include "unifier/eval.hpp"
#include "unifier/solver.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace unifier {

using Json = nlohmann::json;

struct EvaluationSettings {
  int clusters = 0;  // 0: number of distinct labels
  int restarts = 30;
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5};
};

/// Everything needed to reproduce a run.
struct RunConfig {
  std::filesystem::path manifest;
  double mask_ratio = 0.0;  // applied to a complete dataset when > 0
  std::optional<std::uint64_t> mask_seed;  // default: the master seed
  std::uint64_t seed = 0;   // master seed: mask, kmeans and solver streams
  SolverConfig solver;
  EvaluationSettings evaluation;
  std::filesystem::path output_dir = "out";
  bool write_imputed = false;
  bool dump_graphs = false;
};

namespace detail {

inline void reject_unknown(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InputError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw InputError("unknown key \"" + key + "\" in " + where);
}

template <class T>
T get_as(const Json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad value for \"" + key + "\" in " + where + ": " + e.what());
  }
}

template <class T>
void read_if(const Json& j, const std::string& key, T& out, const std::string& where) {
  if (j.contains(key) && !j.at(key).is_null()) out = get_as<T>(j, key, where);
}

}  // namespace detail

inline Json to_json(const SolverConfig& c) {
  Json syl = {{"tol", c.sylvester.tol},
              {"max_iter", c.sylvester.max_iter},
              {"ridge", c.sylvester.ridge ? Json(*c.sylvester.ridge) : Json(nullptr)},
              {"warm_start", c.sylvester.warm_start}};
  return {{"alpha", c.alpha},
          {"lambda", c.lambda},
          {"gamma", c.gamma},
          {"k", c.k},
          {"eps", c.eps},
          {"max_iter", c.max_iter},
          {"tol", c.tol},
          {"select_fraction", c.select_fraction},
          {"ablation", to_string(c.ablation)},
          {"seed", c.seed},
          {"standardize", c.standardize},
          {"check_monotone", c.check_monotone},
          {"monotone_slack", c.monotone_slack},
          {"xi_safeguard", c.xi_safeguard},
          {"sylvester", syl}};
}

inline SolverConfig solver_config_from_json(const Json& j) {
  const std::string where = "solver config";
  detail::reject_unknown(j,
                         {"alpha", "lambda", "gamma", "k", "eps", "max_iter", "tol", "select_fraction",
                          "ablation", "seed", "standardize", "check_monotone", "monotone_slack",
                          "xi_safeguard", "sylvester"},
                         where);
  SolverConfig c;
  if (j.contains("alpha")) {
    if (j["alpha"].is_number())
      c.alpha = {detail::get_as<double>(j, "alpha", where)};
    else
      c.alpha = detail::get_as<std::vector<double>>(j, "alpha", where);
  }
  detail::read_if(j, "lambda", c.lambda, where);
  detail::read_if(j, "gamma", c.gamma, where);
  detail::read_if(j, "k", c.k, where);
  detail::read_if(j, "eps", c.eps, where);
  detail::read_if(j, "max_iter", c.max_iter, where);
  detail::read_if(j, "tol", c.tol, where);
  detail::read_if(j, "select_fraction", c.select_fraction, where);
  if (j.contains("ablation")) c.ablation = parse_ablation(detail::get_as<std::string>(j, "ablation", where));
  detail::read_if(j, "seed", c.seed, where);
  detail::read_if(j, "standardize", c.standardize, where);
  detail::read_if(j, "check_monotone", c.check_monotone, where);
  detail::read_if(j, "monotone_slack", c.monotone_slack, where);
  detail::read_if(j, "xi_safeguard", c.xi_safeguard, where);
  if (j.contains("sylvester")) {
    const auto& s = j["sylvester"];
    detail::reject_unknown(s, {"tol", "max_iter", "ridge", "warm_start"}, "sylvester config");
    detail::read_if(s, "tol", c.sylvester.tol, "sylvester config");
    detail::read_if(s, "max_iter", c.sylvester.max_iter, "sylvester config");
    detail::read_if(s, "warm_start", c.sylvester.warm_start, "sylvester config");
    if (s.contains("ridge") && !s["ridge"].is_null())
      c.sylvester.ridge = detail::get_as<double>(s, "ridge", "sylvester config");
  }
  return c;
}

inline Json to_json(const RunConfig& c) {
  return {{"manifest", c.manifest.string()},
          {"mask", {{"ratio", c.mask_ratio}, {"seed", c.mask_seed ? Json(*c.mask_seed) : Json(nullptr)}}},
          {"seed", c.seed},
          {"solver", to_json(c.solver)},
          {"evaluation",
           {{"clusters", c.evaluation.clusters},
            {"restarts", c.evaluation.restarts},
            {"fractions", c.evaluation.fractions}}},
          {"output_dir", c.output_dir.string()},
          {"write_imputed", c.write_imputed},
          {"dump_graphs", c.dump_graphs}};
}

/// Strict parse: unknown keys anywhere are rejected. Relative paths resolve
/// against `base` (the config file's folder).
inline RunConfig run_config_from_json(const Json& j, const std::filesystem::path& base = {}) {
  const std::string where = "run config";
  detail::reject_unknown(j,
                         {"manifest", "mask", "seed", "solver", "evaluation", "output_dir",
                          "write_imputed", "dump_graphs"},
                         where);
  if (!j.contains("manifest")) throw InputError("run config needs \"manifest\"");
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  c.manifest = resolve(detail::get_as<std::string>(j, "manifest", where));
  if (j.contains("mask") && !j["mask"].is_null()) {
    detail::reject_unknown(j["mask"], {"ratio", "seed"}, "mask config");
    detail::read_if(j["mask"], "ratio", c.mask_ratio, "mask config");
    if (j["mask"].contains("seed") && !j["mask"]["seed"].is_null())
      c.mask_seed = detail::get_as<std::uint64_t>(j["mask"], "seed", "mask config");
  }
  detail::read_if(j, "seed", c.seed, where);
  if (j.contains("solver")) c.solver = solver_config_from_json(j["solver"]);
  c.solver.seed = c.seed;
  if (j.contains("evaluation") && !j["evaluation"].is_null()) {
    const auto& e = j["evaluation"];
    detail::reject_unknown(e, {"clusters", "restarts", "fractions"}, "evaluation config");
    detail::read_if(e, "clusters", c.evaluation.clusters, "evaluation config");
    detail::read_if(e, "restarts", c.evaluation.restarts, "evaluation config");
    detail::read_if(e, "fractions", c.evaluation.fractions, "evaluation config");
  }
  if (j.contains("output_dir")) c.output_dir = resolve(detail::get_as<std::string>(j, "output_dir", where));
  detail::read_if(j, "write_imputed", c.write_imputed, where);
  detail::read_if(j, "dump_graphs", c.dump_graphs, where);
  if (!(c.mask_ratio >= 0.0 && c.mask_ratio <= 0.9)) throw ParameterError("mask ratio must lie in [0, 0.9]");
  if (c.evaluation.restarts < 1) throw ParameterError("evaluation restarts must be at least 1");
  for (double f : c.evaluation.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ParameterError("evaluation fractions must lie in (0, 1]");
  return c;
}

inline Json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open " + file.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(file.string() + " is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& file, const Json& j) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw InputError("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
  return run_config_from_json(read_json_file(file), file.parent_path());
}

inline Json matrix_to_json(const Matrix& M) {
  Json rows = Json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(M.cols()));
    for (Index j = 0; j < M.cols(); ++j) row[static_cast<std::size_t>(j)] = M(i, j);
    rows.push_back(row);
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& rows, Index cols) {
  Matrix M(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != cols) throw InputError("matrix row has the wrong width");
    for (Index j = 0; j < cols; ++j) M(static_cast<Index>(i), j) = rows[i][static_cast<std::size_t>(j)].get<double>();
  }
  return M;
}

/// Result document: per-view rankings and scores, objective trace, the
/// imputed rows (solver units), sample weights, mask and the full run config.
inline Json to_json(const SelectionResult& r, const RunConfig& run, const MaskSpec& mask) {
  Json views = Json::array();
  for (std::size_t v = 0; v < r.views.size(); ++v) {
    const auto& sel = r.views[v];
    std::vector<double> scores(sel.scores.data(), sel.scores.data() + sel.scores.size());
    views.push_back({{"ranking", sel.ranking},
                     {"scores", scores},
                     {"selected", sel.selected},
                     {"missing", r.missing[v]},
                     {"imputed_rows", matrix_to_json(r.completed[v].rows() ? gather_rows(r.completed[v], r.missing[v]) : Matrix())},
                     {"sample_weights", std::vector<double>(r.sample_weights[v].data(),
                                                            r.sample_weights[v].data() + r.sample_weights[v].size())},
                     {"sylvester_iterations", r.sylvester_iterations[v]},
                     {"safeguarded_rows", r.safeguarded_rows[v]}});
  }
  return {{"views", views},
          {"objective_trace", r.objective_trace},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"mask", {{"ratio", mask.ratio}, {"seed", mask.seed}, {"missing", mask.missing}}},
          {"config", to_json(run)}};
}

/// Rebuilds what evaluation needs (rankings and completed views) from a
/// result document and its dataset.
inline std::pair<MultiViewDataset, SelectionResult> selection_from_json(const Json& doc) {
  const auto run = run_config_from_json(doc.at("config"));
  MultiViewDataset ds = load_dataset(run.manifest);
  std::vector<IndexList> missing;
  for (const auto& v : doc.at("views")) missing.push_back(v.at("missing").get<IndexList>());
  if (static_cast<Index>(missing.size()) != ds.num_views())
    throw InputError("result has " + std::to_string(missing.size()) + " views, dataset has " +
                     std::to_string(ds.num_views()));
  if (ds.complete()) mark_missing(ds, missing);
  if (missing_indices(ds) != missing) throw InputError("result mask does not match the dataset");
  validate(ds);

  MultiViewDataset working = ds;
  if (run.solver.standardize) working = standardize(ds).first;
  SelectionResult r;
  r.config = run.solver;
  r.missing = missing;
  for (std::size_t v = 0; v < missing.size(); ++v) {
    const auto& jv = doc["views"][v];
    ViewSelection sel;
    sel.ranking = jv.at("ranking").get<IndexList>();
    sel.selected = jv.at("selected").get<IndexList>();
    const auto scores = jv.at("scores").get<std::vector<double>>();
    sel.scores = Eigen::Map<const Vector>(scores.data(), static_cast<Index>(scores.size()));
    r.views.push_back(std::move(sel));
    const auto k = build_indicators(working.masks[v]);
    const Matrix imputed = matrix_from_json(jv.at("imputed_rows"), working.views[v].cols());
    r.completed.push_back(assemble(k, gather_rows(working.views[v], k.observed_rows), imputed));
  }
  r.objective_trace = doc.at("objective_trace").get<std::vector<double>>();
  r.iterations = doc.at("iterations").get<int>();
  r.converged = doc.at("converged").get<bool>();
  return {std::move(ds), std::move(r)};
}

inline Json metrics_record(const ClusteringOutcome& o, int clusters, std::uint64_t seed, double fraction) {
  return {{"acc", o.acc},
          {"nmi", o.nmi},
          {"c", clusters},
          {"restarts", o.restarts},
          {"seed", seed},
          {"selected_fraction", fraction}};
}

/// Distinct label count, the default cluster number.
inline int distinct_labels(const Labels& labels) {
  return static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
}

}  // namespace unifier
