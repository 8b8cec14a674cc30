#pragma once

// Small deterministic models and datasets shared by the unit and acceptance
// tests.

#include <cmath>

#include "common/rng.hpp"
#include "models/dataset.hpp"
#include "models/spec.hpp"

namespace infusion::testing {

inline models::ModelSpec mlp_spec(std::vector<int> dims) {
  models::ModelSpec s;
  s.arch = models::Arch::mlp;
  s.mlp_dims = std::move(dims);
  s.num_classes = s.mlp_dims.back();
  return s;
}

inline models::ModelSpec small_cnn_spec(bool residual = true) {
  models::ModelSpec s;
  s.arch = models::Arch::res_cnn;
  s.in_channels = 2;
  s.height = 4;
  s.width = 4;
  s.channels = {3, 4};
  s.residual = residual;
  s.num_classes = 3;
  return s;
}

inline models::ModelSpec small_decoder_spec(int vocab = 7, int context = 8) {
  models::ModelSpec s;
  s.arch = models::Arch::tiny_decoder;
  s.vocab = vocab;
  s.context = context;
  s.d_model = 8;
  s.n_layers = 1;
  s.n_heads = 2;
  s.d_ff = 12;
  return s;
}

// Gaussian blobs in `dim` dimensions, one centre per class.
inline models::Dataset blob_dataset(std::size_t n, std::size_t dim, int classes, std::uint64_t seed,
                                    double spread = 0.6) {
  Rng rng = make_rng(seed, {77});
  std::vector<std::vector<double>> centres(classes, std::vector<double>(dim));
  for (auto& c : centres)
    for (auto& v : c) v = uniform(rng, -1.5, 1.5);
  models::Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    models::Example e;
    e.label = static_cast<int>(i % static_cast<std::size_t>(classes));
    e.features = Tensor({dim});
    for (std::size_t k = 0; k < dim; ++k) e.features[k] = centres[e.label][k] + spread * normal(rng);
    d.push_back(std::move(e));
  }
  return d;
}

inline models::Dataset random_images(std::size_t n, const models::ModelSpec& s, std::uint64_t seed) {
  Rng rng = make_rng(seed, {78});
  models::Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    models::Example e;
    e.label = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(s.num_classes)));
    e.features = Tensor({static_cast<std::size_t>(s.in_channels), static_cast<std::size_t>(s.height),
                         static_cast<std::size_t>(s.width)});
    for (auto& v : e.features.data()) v = uniform01(rng);
    d.push_back(std::move(e));
  }
  return d;
}

inline models::Dataset random_sequences(std::size_t n, int vocab, std::size_t min_len, std::size_t max_len,
                                        std::uint64_t seed) {
  Rng rng = make_rng(seed, {79});
  models::Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    models::Example e;
    const std::size_t L = min_len + uniform_index(rng, max_len - min_len + 1);
    for (std::size_t t = 0; t < L; ++t) e.tokens.push_back(static_cast<int>(uniform_index(rng, vocab)));
    e.loss_mask.assign(L, 1.0);
    e.loss_mask[1] = 0.5;
    d.push_back(std::move(e));
  }
  return d;
}

inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double d = 0.0, r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    r += b[i] * b[i];
  }
  return std::sqrt(d) / std::max(std::sqrt(r), 1e-300);
}

}  // namespace infusion::testing
