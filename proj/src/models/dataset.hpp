#pragma once

#include <vector>

#include "tensor/tensor.hpp"

namespace infusion::models {

// One training document. Classification examples use `features` + `label`;
// sequence examples use `tokens` + `loss_mask` (mask[t] weights the
// prediction of tokens[t] from tokens[0..t-1]; mask[0] is ignored).
struct Example {
  Tensor features;
  int label = -1;
  std::vector<int> tokens;
  std::vector<double> loss_mask;
  // Optional [tokens.size(), d_model] offset added to the token embeddings
  // (embedding-space perturbation mode).
  Tensor embed_offset;
  // Multiplies this example's loss (upweighting experiments); 1 by default.
  double weight = 1.0;

  bool is_sequence() const { return !tokens.empty(); }

  friend bool operator==(const Example& a, const Example& b) {
    return a.features == b.features && a.label == b.label && a.tokens == b.tokens && a.loss_mask == b.loss_mask &&
           a.embed_offset == b.embed_offset && a.weight == b.weight;
  }
};

using Dataset = std::vector<Example>;

}  // namespace infusion::models
