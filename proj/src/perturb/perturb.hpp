#pragma once

// Perturbation gradient and projected gradient ascent on training documents.
//
// With v = (G + lambda I)^{-1} grad f for the objective f being increased, the
// first-order change of f when document z becomes z + delta and the model is
// refit on n documents is G_delta^T delta with
//
//   G_delta = -(1/n) grad_z <grad_theta L(z, theta), v>
//           ~ -(1/n) [grad_z L(z, theta + h v) - grad_z L(z, theta - h v)] / (2h).

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "models/dataset.hpp"
#include "models/model.hpp"
#include "models/network.hpp"

namespace infusion::perturb {

// Which part of a document is perturbed.
enum class Space {
  features,   // classification input, kept inside [lo, hi]
  embedding,  // additive offset on the token embeddings (unbounded)
  tokens,     // relaxed token distribution
};

struct PertGradOptions {
  double h0 = 1e-3;     // h = h0 / ||v||
  std::size_t n = 1;    // refit set size in the 1/n prefactor
};

// Gradient of doc's loss with respect to its input in `space`, evaluated with
// `input` substituted (features, embedding offset [T, d] or distribution [T, V]).
Tensor input_gradient(const models::Network& net, std::span<const double> params, const models::Example& doc,
                      Space space, const Tensor& input);

// Current value of the perturbable input of doc in `space`.
Tensor input_of(const models::Network& net, const models::Example& doc, Space space);

Tensor pert_gradient(const models::Network& net, std::span<const double> params, const models::Example& doc,
                     Space space, const Tensor& input, std::span<const double> v, const PertGradOptions& opt);

enum class Norm { linf, l2 };

struct PgdConfig {
  double epsilon = 1.0;
  double alpha = 0.001;
  int steps = 50;
  Norm norm = Norm::linf;
  bool recompute = true;  // re-linearize at z + delta every step
  double lo = 0.0;        // valid input range (features space only)
  double hi = 1.0;
};

struct PgdResult {
  Tensor delta;
  double predicted_df = 0.0;  // sum over steps of G_t^T (delta_t - delta_{t-1})
};

PgdResult pgd_continuous(const models::Network& net, std::span<const double> params, const models::Example& doc,
                         Space space, std::span<const double> v, const PgdConfig& cfg, const PertGradOptions& opt);

struct DiscreteConfig {
  double alpha = 0.01;
  int epochs = 30;
  double entropy_floor = 0.0;
  double change_budget = 0.1;        // max fraction of positions replaced
  std::vector<char> editable;        // per position; empty = all but position 0
};

struct DiscreteResult {
  std::vector<int> tokens;
  std::vector<std::size_t> changed;  // positions replaced after budget enforcement
  std::size_t changes_before_budget = 0;
  double predicted_df = 0.0;         // first-order gain of the final edit at the original tokens
};

DiscreteResult pgd_discrete(const models::Network& net, std::span<const double> params, const models::Example& doc,
                            std::span<const double> v, const DiscreteConfig& cfg, const PertGradOptions& opt);

// delta uniform in [-eps, eps] per coordinate, then clipped so z + delta stays in [lo, hi].
Tensor baseline_random_noise(const Tensor& z, double epsilon, std::uint64_t seed, double lo = 0.0, double hi = 1.0);

// Replaces every listed document by (probe, target_label).
models::Dataset baseline_probe_insert(const models::Dataset& data, const Tensor& probe, int target_label,
                                      std::span<const std::size_t> ids);

}  // namespace infusion::perturb
