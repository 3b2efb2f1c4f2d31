#pragma once

// Planted-cluster multi-view data. Every view has `informative` features that
// are noisy linear read-outs of a shared per-cluster latent code, followed by
// pure-noise features. Informative columns come first, so feature j of view v
// is informative iff j < informative[v].

#include "unifier/common.hpp"
#include "unifier/data.hpp"

#include <string>
#include <vector>

namespace unifier {

struct SyntheticSpec {
  Index samples = 60;
  std::vector<Index> dims{20, 15};
  std::vector<Index> informative{5, 5};
  int clusters = 3;
  int latent = 3;            // dimension of the shared cluster code
  double separation = 3.0;   // std of cluster code entries
  double signal_noise = 0.5; // noise std on informative features
  double feature_noise = 1.0;
  double outlier_fraction = 0.0;  // rows replaced by large-variance noise
  double outlier_scale = 6.0;
  std::uint64_t seed = 0;
};

inline MultiViewDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.dims.empty() || spec.dims.size() != spec.informative.size())
    throw ParameterError("dims and informative counts must be non-empty and equally long");
  if (spec.clusters < 1 || spec.samples < spec.clusters)
    throw ParameterError("need at least one sample per cluster");
  for (std::size_t v = 0; v < spec.dims.size(); ++v)
    if (spec.dims[v] < 1 || spec.informative[v] < 0 || spec.informative[v] > spec.dims[v])
      throw ParameterError("view " + std::to_string(v) + ": need 0 <= informative <= dims, dims >= 1");

  std::mt19937_64 rng(derive_seed(spec.seed, "synthetic"));
  const Index n = spec.samples;

  Labels labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % spec.clusters);
  for (Index i = n - 1; i > 0; --i)
    std::swap(labels[static_cast<std::size_t>(i)],
              labels[static_cast<std::size_t>(uniform_below(rng, static_cast<std::uint64_t>(i + 1)))]);

  Matrix codes(spec.clusters, spec.latent);
  for (Index c = 0; c < codes.rows(); ++c)
    for (Index j = 0; j < codes.cols(); ++j) codes(c, j) = spec.separation * standard_normal(rng);

  MultiViewDataset ds;
  for (std::size_t v = 0; v < spec.dims.size(); ++v) {
    const Index d = spec.dims[v], q = spec.informative[v];
    Matrix loadings(spec.latent, q);
    for (Index a = 0; a < loadings.rows(); ++a)
      for (Index b = 0; b < q; ++b) loadings(a, b) = standard_normal(rng) / std::sqrt(double(spec.latent));
    Matrix X(n, d);
    for (Index i = 0; i < n; ++i) {
      const auto y = labels[static_cast<std::size_t>(i)];
      for (Index j = 0; j < q; ++j)
        X(i, j) = codes.row(y).dot(loadings.col(j)) + spec.signal_noise * standard_normal(rng);
      for (Index j = q; j < d; ++j) X(i, j) = spec.feature_noise * standard_normal(rng);
    }
    const auto outliers = static_cast<Index>(spec.outlier_fraction * static_cast<double>(n));
    for (Index o = 0; o < outliers; ++o) {
      const auto i = static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(n)));
      for (Index j = 0; j < d; ++j) X(i, j) = spec.outlier_scale * standard_normal(rng);
    }
    ds.views.push_back(std::move(X));
    ds.masks.emplace_back(static_cast<std::size_t>(n), true);
    ds.names.push_back("view" + std::to_string(v));
  }
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace unifier
