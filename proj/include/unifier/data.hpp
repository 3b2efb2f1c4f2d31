#pragma once

// Multi-view datasets with missing samples: loading, masking, indicator
// matrices and the mean initialization of missing blocks.

#include "unifier/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace unifier {

using Mask = std::vector<bool>;

/// Row-aligned views of the same n samples. Rows of a view that are not
/// observed (mask entry false) hold NaN and must never be read.
struct MultiViewDataset {
  std::vector<Matrix> views;
  std::vector<Mask> masks;
  std::optional<Labels> labels;
  std::vector<std::string> names;

  Index num_samples() const { return views.empty() ? 0 : views.front().rows(); }
  Index num_views() const { return static_cast<Index>(views.size()); }
  Index missing_count(Index v) const {
    const auto& m = masks[static_cast<std::size_t>(v)];
    return static_cast<Index>(std::count(m.begin(), m.end(), false));
  }
  bool complete() const {
    for (Index v = 0; v < num_views(); ++v)
      if (missing_count(v) != 0) return false;
    return true;
  }
};

/// Row bookkeeping behind the two 0/1 indicator matrices: the observed map
/// (n x (n-m)) scatters observed rows, the missing map (n x m) scatters
/// missing rows, each in ascending original index order.
struct IndicatorPair {
  Index n = 0;
  IndexList observed_rows;
  IndexList missing_rows;

  Index num_missing() const { return static_cast<Index>(missing_rows.size()); }
  Index num_observed() const { return static_cast<Index>(observed_rows.size()); }

  Matrix observed_map() const { return selection_matrix(observed_rows); }
  Matrix missing_map() const { return selection_matrix(missing_rows); }

 private:
  Matrix selection_matrix(const IndexList& rows) const {
    Matrix K = Matrix::Zero(n, static_cast<Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) K(rows[j], static_cast<Index>(j)) = 1.0;
    return K;
  }
};

/// Outcome of the masking protocol.
struct MaskSpec {
  double ratio = 0.0;
  std::uint64_t seed = 0;
  std::vector<IndexList> missing;  // per view, ascending

  bool operator==(const MaskSpec&) const = default;
};

/// Per-feature affine map applied before solving: z = (x - mean) / scale.
struct Standardization {
  std::vector<Vector> mean;
  std::vector<Vector> scale;
};

inline void validate(const MultiViewDataset& ds) {
  if (ds.views.empty()) throw InputError("dataset has no views");
  const Index n = ds.num_samples();
  if (n < 1) throw InputError("dataset has no samples");
  if (ds.masks.size() != ds.views.size()) throw InputError("one mask per view is required");
  for (std::size_t v = 0; v < ds.views.size(); ++v) {
    if (ds.views[v].rows() != n)
      throw InputError("view " + std::to_string(v) + " has " + std::to_string(ds.views[v].rows()) +
                       " rows, expected " + std::to_string(n));
    if (ds.views[v].cols() < 1) throw InputError("view " + std::to_string(v) + " has no features");
    if (static_cast<Index>(ds.masks[v].size()) != n)
      throw InputError("mask of view " + std::to_string(v) + " has wrong length");
    if (std::none_of(ds.masks[v].begin(), ds.masks[v].end(), [](bool b) { return b; }))
      throw InputError("view " + std::to_string(v) + " is missing every sample");
    for (Index i = 0; i < n; ++i)
      if (ds.masks[v][static_cast<std::size_t>(i)] && !ds.views[v].row(i).allFinite())
        throw InputError("view " + std::to_string(v) + " row " + std::to_string(i) +
                         " is observed but not finite");
  }
  for (Index i = 0; i < n; ++i) {
    bool seen = false;
    for (const auto& m : ds.masks) seen = seen || m[static_cast<std::size_t>(i)];
    if (!seen) throw InputError("sample " + std::to_string(i) + " is missing in every view");
  }
  if (ds.labels && static_cast<Index>(ds.labels->size()) != n)
    throw InputError("labels have " + std::to_string(ds.labels->size()) + " entries, expected " +
                     std::to_string(n));
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::string location(const std::filesystem::path& file, std::size_t row) {
  return file.string() + " row " + std::to_string(row);
}

inline void append_double(std::string& out, double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  out.append(buf, ptr);
}

}  // namespace detail

/// Parsed matrix CSV: values plus which rows were entirely empty.
struct CsvMatrix {
  Matrix values;
  Mask observed;
};

inline CsvMatrix read_matrix_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open " + file.string());
  std::vector<std::vector<double>> rows;
  Mask observed;
  std::optional<std::size_t> width;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto trimmed = detail::trim(line);
    if (trimmed.empty()) {
      rows.emplace_back();
      observed.push_back(false);
      ++row;
      continue;
    }
    const auto cells = detail::split_cells(trimmed);
    if (!width) width = cells.size();
    if (cells.size() != *width)
      throw InputError("ragged CSV at " + detail::location(file, row) + ": " +
                       std::to_string(cells.size()) + " cells, expected " + std::to_string(*width));
    const auto empty = std::count_if(cells.begin(), cells.end(), [](auto c) { return c.empty(); });
    if (empty == static_cast<std::ptrdiff_t>(cells.size())) {
      rows.emplace_back();
      observed.push_back(false);
      ++row;
      continue;
    }
    if (empty != 0)
      throw InputError("partially missing row at " + detail::location(file, row) +
                       " (a row must be entirely empty or entirely filled)");
    std::vector<double> values;
    values.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double x = 0.0;
      const auto cell = cells[c];
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(x))
        throw InputError("non-numeric cell '" + std::string(cell) + "' at " +
                         detail::location(file, row) + " column " + std::to_string(c));
      values.push_back(x);
    }
    rows.push_back(std::move(values));
    observed.push_back(true);
    ++row;
  }
  if (!width) throw InputError("no data rows in " + file.string());
  CsvMatrix out{Matrix::Constant(static_cast<Index>(rows.size()), static_cast<Index>(*width),
                                 std::numeric_limits<double>::quiet_NaN()),
                std::move(observed)};
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      out.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return out;
}

/// Writes one sample per line with shortest round-trip formatting. Rows
/// flagged unobserved are written as empty cells.
inline void write_matrix_csv(const std::filesystem::path& file, const Matrix& M,
                             const Mask* observed = nullptr) {
  std::string out;
  for (Index i = 0; i < M.rows(); ++i) {
    const bool present = observed == nullptr || (*observed)[static_cast<std::size_t>(i)];
    for (Index j = 0; j < M.cols(); ++j) {
      if (j) out.push_back(',');
      if (present) detail::append_double(out, M(i, j));
    }
    out.push_back('\n');
  }
  std::ofstream f(file, std::ios::binary);
  if (!f) throw InputError("cannot write " + file.string());
  f << out;
}

inline Labels read_labels_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open " + file.string());
  Labels labels;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto cell = detail::split_cells(detail::trim(line)).front();
    int y = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
    if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
      throw InputError("non-integer label '" + std::string(cell) + "' at " +
                       detail::location(file, row));
    labels.push_back(y);
    ++row;
  }
  return labels;
}

inline void write_labels_csv(const std::filesystem::path& file, const Labels& labels) {
  std::ofstream f(file, std::ios::binary);
  if (!f) throw InputError("cannot write " + file.string());
  for (int y : labels) f << y << '\n';
}

/// Mask CSV rows are `view_index,sample_index` pairs naming missing samples.
inline std::vector<IndexList> read_mask_csv(const std::filesystem::path& file, Index num_views,
                                            Index n) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open " + file.string());
  std::vector<IndexList> missing(static_cast<std::size_t>(num_views));
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    const auto trimmed = detail::trim(line);
    if (trimmed.empty()) {
      ++row;
      continue;
    }
    const auto cells = detail::split_cells(trimmed);
    if (cells.size() != 2) throw InputError("mask entry needs 2 cells at " + detail::location(file, row));
    long long ids[2];
    for (int c = 0; c < 2; ++c) {
      auto [ptr, ec] = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), ids[c]);
      if (ec != std::errc() || ptr != cells[c].data() + cells[c].size())
        throw InputError("non-integer mask cell at " + detail::location(file, row));
    }
    if (ids[0] < 0 || ids[0] >= num_views || ids[1] < 0 || ids[1] >= n)
      throw InputError("mask entry out of range at " + detail::location(file, row));
    missing[static_cast<std::size_t>(ids[0])].push_back(static_cast<Index>(ids[1]));
    ++row;
  }
  for (auto& list : missing) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return missing;
}

inline void write_mask_csv(const std::filesystem::path& file, const std::vector<IndexList>& missing) {
  std::ofstream f(file, std::ios::binary);
  if (!f) throw InputError("cannot write " + file.string());
  for (std::size_t v = 0; v < missing.size(); ++v)
    for (Index i : missing[v]) f << v << ',' << i << '\n';
}

/// Missing sample indices of every view, ascending.
inline std::vector<IndexList> missing_indices(const MultiViewDataset& ds) {
  std::vector<IndexList> out(ds.views.size());
  for (std::size_t v = 0; v < ds.views.size(); ++v)
    for (std::size_t i = 0; i < ds.masks[v].size(); ++i)
      if (!ds.masks[v][i]) out[v].push_back(static_cast<Index>(i));
  return out;
}

/// Marks the listed samples missing (their rows become NaN).
inline void mark_missing(MultiViewDataset& ds, const std::vector<IndexList>& missing) {
  for (std::size_t v = 0; v < missing.size() && v < ds.views.size(); ++v)
    for (Index i : missing[v]) {
      ds.masks[v][static_cast<std::size_t>(i)] = false;
      ds.views[v].row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
}

/// Loads a manifest `{ "views": [{"name", "path"}], "labels": str|null,
/// "mask": str|null }`. Relative paths resolve against the manifest's folder.
inline MultiViewDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw InputError("cannot open manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("views") || !manifest["views"].is_array())
    throw InputError("manifest " + manifest_path.string() + " needs a \"views\" array");
  for (const auto& [key, _] : manifest.items())
    if (key != "views" && key != "labels" && key != "mask")
      throw InputError("manifest " + manifest_path.string() + " has unknown key \"" + key + "\"");

  const auto base = manifest_path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  MultiViewDataset ds;
  for (const auto& entry : manifest["views"]) {
    if (!entry.is_object() || !entry.contains("path") || !entry["path"].is_string())
      throw InputError("every manifest view needs a \"path\" string");
    const auto file = resolve(entry["path"].get<std::string>());
    auto csv = read_matrix_csv(file);
    if (!ds.views.empty() && csv.values.rows() != ds.num_samples())
      throw InputError("row-count mismatch: " + file.string() + " has " +
                       std::to_string(csv.values.rows()) + " rows, first view has " +
                       std::to_string(ds.num_samples()));
    ds.names.push_back(entry.value("name", "view" + std::to_string(ds.views.size())));
    ds.views.push_back(std::move(csv.values));
    ds.masks.push_back(std::move(csv.observed));
  }
  if (ds.views.empty()) throw InputError("manifest lists no views");

  if (manifest.contains("labels") && !manifest["labels"].is_null()) {
    const auto file = resolve(manifest["labels"].get<std::string>());
    ds.labels = read_labels_csv(file);
    if (static_cast<Index>(ds.labels->size()) != ds.num_samples())
      throw InputError("row-count mismatch: " + file.string() + " has " +
                       std::to_string(ds.labels->size()) + " labels, views have " +
                       std::to_string(ds.num_samples()) + " rows");
  }
  if (manifest.contains("mask") && !manifest["mask"].is_null()) {
    const auto file = resolve(manifest["mask"].get<std::string>());
    mark_missing(ds, read_mask_csv(file, ds.num_views(), ds.num_samples()));
  }
  validate(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Masking protocol

/// Removes floor(n * ratio) samples from every view, uniformly at random under
/// `seed`. Draws are independent per view; a sample left missing in every view
/// is swapped, within one of its views, against a random sample that stays
/// covered elsewhere. Repeats with a fresh draw when no swap partner exists.
inline std::pair<MultiViewDataset, MaskSpec> apply_mask(const MultiViewDataset& dataset,
                                                        double ratio, std::uint64_t seed,
                                                        int max_attempts = 100) {
  validate(dataset);
  if (!(ratio >= 0.0 && ratio <= 0.9))
    throw ParameterError("mask ratio must lie in [0, 0.9], got " + std::to_string(ratio));
  if (!dataset.complete()) throw InputError("apply_mask expects a complete dataset");

  const Index n = dataset.num_samples();
  const auto V = static_cast<std::size_t>(dataset.num_views());
  // Guard against 0.2 * 10 = 1.9999999999999998 style truncation.
  const auto m = static_cast<Index>(std::floor(static_cast<double>(n) * ratio + 1e-9));

  MaskSpec spec{ratio, seed, std::vector<IndexList>(V)};
  if (m == 0) return {dataset, spec};
  if (static_cast<Index>(V) * (n - m) < n)
    throw InputError("infeasible mask: " + std::to_string(V) + " views with " +
                     std::to_string(n - m) + " observed samples each cannot cover " +
                     std::to_string(n) + " samples");

  std::mt19937_64 rng(derive_seed(seed, "mask"));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<Mask> masks(V, Mask(static_cast<std::size_t>(n), true));
    for (std::size_t v = 0; v < V; ++v) {
      for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
      for (Index j = 0; j < m; ++j) {
        const auto pick = j + static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(n - j)));
        std::swap(perm[static_cast<std::size_t>(j)], perm[static_cast<std::size_t>(pick)]);
        masks[v][static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])] = false;
      }
    }
    auto coverage = [&](Index i) {
      int c = 0;
      for (const auto& mk : masks) c += mk[static_cast<std::size_t>(i)] ? 1 : 0;
      return c;
    };
    bool feasible = true;
    for (Index s = 0; s < n && feasible; ++s) {
      if (coverage(s) > 0) continue;
      const auto v = static_cast<std::size_t>(uniform_below(rng, V));
      IndexList partners;
      for (Index t = 0; t < n; ++t)
        if (masks[v][static_cast<std::size_t>(t)] && coverage(t) >= 2) partners.push_back(t);
      if (partners.empty()) {
        feasible = false;
        break;
      }
      const Index t = partners[static_cast<std::size_t>(uniform_below(rng, partners.size()))];
      masks[v][static_cast<std::size_t>(t)] = false;
      masks[v][static_cast<std::size_t>(s)] = true;
    }
    if (!feasible) continue;

    MultiViewDataset out = dataset;
    out.masks = masks;
    spec.missing = missing_indices(out);
    mark_missing(out, spec.missing);
    return {std::move(out), spec};
  }
  throw InputError("infeasible mask: no assignment leaves every sample observed after " +
                   std::to_string(max_attempts) + " attempts (ratio " + std::to_string(ratio) + ")");
}

inline IndicatorPair build_indicators(const Mask& mask) {
  IndicatorPair k;
  k.n = static_cast<Index>(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    (mask[i] ? k.observed_rows : k.missing_rows).push_back(static_cast<Index>(i));
  if (k.observed_rows.empty()) throw InputError("indicator construction needs an observed sample");
  return k;
}

/// Rows of `X` listed in `rows`, in order.
inline Matrix gather_rows(const Matrix& X, const IndexList& rows) {
  Matrix out(static_cast<Index>(rows.size()), X.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = X.row(rows[r]);
  return out;
}

/// The completed view K_obs * observed + K_mis * missing, formed by scatter so
/// observed entries are copied bit for bit.
inline Matrix assemble(const IndicatorPair& k, const Matrix& observed, const Matrix& missing) {
  Matrix X(k.n, observed.cols());
  for (std::size_t r = 0; r < k.observed_rows.size(); ++r)
    X.row(k.observed_rows[r]) = observed.row(static_cast<Index>(r));
  for (std::size_t r = 0; r < k.missing_rows.size(); ++r)
    X.row(k.missing_rows[r]) = missing.row(static_cast<Index>(r));
  return X;
}

/// Column means of the observed rows, replicated over the missing rows.
inline std::vector<Matrix> mean_initialize_missing(const MultiViewDataset& dataset) {
  std::vector<Matrix> blocks;
  for (std::size_t v = 0; v < dataset.views.size(); ++v) {
    const auto k = build_indicators(dataset.masks[v]);
    const Matrix observed = gather_rows(dataset.views[v], k.observed_rows);
    const Eigen::RowVectorXd mean = observed.colwise().mean();
    blocks.push_back(mean.replicate(k.num_missing(), 1));
  }
  return blocks;
}

/// Z-scores every feature using observed rows only. Constant features keep
/// scale 1. Missing rows stay NaN.
inline std::pair<MultiViewDataset, Standardization> standardize(const MultiViewDataset& dataset) {
  MultiViewDataset out = dataset;
  Standardization st;
  for (std::size_t v = 0; v < dataset.views.size(); ++v) {
    const auto k = build_indicators(dataset.masks[v]);
    const Matrix observed = gather_rows(dataset.views[v], k.observed_rows);
    const Vector mean = observed.colwise().mean().transpose();
    Vector scale(observed.cols());
    for (Index j = 0; j < observed.cols(); ++j) {
      const double var = (observed.col(j).array() - mean(j)).square().mean();
      scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    for (Index i : k.observed_rows)
      out.views[v].row(i) =
          ((dataset.views[v].row(i).transpose() - mean).array() / scale.array()).transpose();
    st.mean.push_back(mean);
    st.scale.push_back(scale);
  }
  return {std::move(out), std::move(st)};
}

}  // namespace unifier
