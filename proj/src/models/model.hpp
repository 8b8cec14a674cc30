#pragma once

// Loss graphs, per-example gradients and log-probabilities for a Network at a
// given flat parameter vector.

#include <cstdint>
#include <span>
#include <vector>

#include "models/dataset.hpp"
#include "models/network.hpp"

namespace infusion::models {

// Which input, if any, becomes a differentiable leaf of the loss graph.
enum class InputLeaf {
  none,
  features,      // classification features
  tokens,        // relaxed token distribution [T, V] (single sequence)
  embed_offset,  // additive embedding offset [T, d_model] (single sequence)
};

struct LossRequest {
  bool param_grad = true;
  InputLeaf input = InputLeaf::none;
  // tokens mode: the relaxed distribution. Targets follow it shifted by one
  // row, so editing a position changes both what is read and what is predicted.
  const Tensor* token_dist = nullptr;
  // Replaces the data targets (sampled-label Fisher). Rows: one per logits row.
  const Tensor* target_rows = nullptr;
};

struct LossGraph {
  std::vector<ad::Var> params;
  ad::Var input;  // valid when an input leaf was requested
  ForwardPass forward;
  ad::Var loss;   // mean over the batch of weight * per-example loss
  std::vector<double> row_weights;
  std::size_t seq = 0;  // padded sequence length (0 for classification)
};

// Per-example loss: cross-entropy for classification; for sequences the
// mask-weighted mean next-token cross-entropy.
LossGraph build_loss(ad::Tape& tape, const Network& net, std::span<const double> params,
                     std::span<const Example* const> batch, const LossRequest& request = {});

// Flat parameter gradient of the last backward() on `tape`.
std::vector<double> flat_param_grad(const ad::Tape& tape, const Network& net, const LossGraph& graph);

double batch_loss(const Network& net, std::span<const double> params, std::span<const Example* const> batch);
std::vector<double> batch_grad(const Network& net, std::span<const double> params,
                               std::span<const Example* const> batch, double* loss_out = nullptr);

double example_loss(const Network& net, std::span<const double> params, const Example& ex);
std::vector<double> example_grad(const Network& net, std::span<const double> params, const Example& ex);

// One gradient per example; rows of the returned vector follow `batch`.
std::vector<std::vector<double>> per_example_grads(const Network& net, std::span<const double> params,
                                                   std::span<const Example> batch);

// Log-probabilities: [C] for a classification example, [T, V] for a sequence
// (row t is the distribution of token t+1 given tokens[0..t]).
Tensor log_probs(const Network& net, std::span<const double> params, const Example& ex);
std::vector<Tensor> log_probs(const Network& net, std::span<const double> params, std::span<const Example> batch);

void validate_dataset(const Network& net, std::span<const Example> data);

std::vector<const Example*> pointers(std::span<const Example> data);

}  // namespace infusion::models
