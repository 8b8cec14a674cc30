#pragma once

// One randomized scalar graph per autodiff primitive, shared by the unit
// tests and the acceptance suite.

#include <string>
#include <vector>

#include "support/finite_diff.hpp"

namespace infusion::testing {

struct PrimitiveCase {
  std::string name;
  GraphBuilder build;
  std::vector<Tensor> inputs;
};

inline std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed) {
  using namespace ad;
  Rng rng = make_rng(seed, {0});
  std::vector<PrimitiveCase> cases;
  auto reduce = [&rng](Shape s) {
    auto w = random_tensor(rng, std::move(s));
    return [w](Var x) { return weighted_sum(x, w); };
  };

  {
    auto r = reduce({3, 4});
    cases.push_back({"matmul", [r](Tape&, const std::vector<Var>& v) { return r(matmul(v[0], v[1])); },
                     {random_tensor(rng, {3, 5}), random_tensor(rng, {5, 4})}});
  }
  {
    auto r = reduce({4, 3});
    cases.push_back({"linear", [r](Tape&, const std::vector<Var>& v) { return r(linear(v[0], v[1], v[2])); },
                     {random_tensor(rng, {4, 5}), random_tensor(rng, {3, 5}), random_tensor(rng, {3})}});
  }
  {
    auto r = reduce({4, 3});
    cases.push_back({"add", [r](Tape&, const std::vector<Var>& v) { return r(add(v[0], v[1])); },
                     {random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3})}});
  }
  {
    auto r = reduce({4, 3});
    cases.push_back({"broadcast_add", [r](Tape&, const std::vector<Var>& v) { return r(add(v[0], v[1])); },
                     {random_tensor(rng, {4, 3}), random_tensor(rng, {3})}});
  }
  {
    auto r = reduce({6});
    cases.push_back({"mul", [r](Tape&, const std::vector<Var>& v) { return r(mul(v[0], v[1])); },
                     {random_tensor(rng, {6}), random_tensor(rng, {6})}});
  }
  {
    auto r = reduce({5});
    cases.push_back({"scale_sum", [r](Tape&, const std::vector<Var>& v) {
                       return add(r(scale(v[0], -1.7)), sum(v[0]));
                     },
                     {random_tensor(rng, {5})}});
  }
  {
    auto r = reduce({2, 6});
    cases.push_back({"relu", [r](Tape&, const std::vector<Var>& v) { return r(relu(v[0])); },
                     {random_away_from_zero(rng, {2, 6})}});
  }
  {
    auto r = reduce({3, 4});
    cases.push_back({"reshape", [r](Tape&, const std::vector<Var>& v) { return r(reshape(v[0], {3, 4})); },
                     {random_tensor(rng, {2, 6})}});
  }
  {
    auto r = reduce({2 * 4 * 4, 3});
    cases.push_back({"chw_to_hwc", [r](Tape&, const std::vector<Var>& v) { return r(chw_to_hwc(v[0])); },
                     {random_tensor(rng, {2, 3, 4, 4})}});
  }
  {
    auto r = reduce({2 * 4 * 4, 18});
    cases.push_back({"im2col3x3", [r](Tape&, const std::vector<Var>& v) { return r(im2col3x3(v[0], 2, 4, 4)); },
                     {random_tensor(rng, {2 * 4 * 4, 2})}});
  }
  {
    auto r = reduce({1 * 4 * 4, 3});
    cases.push_back({"conv3x3", [r](Tape&, const std::vector<Var>& v) {
                       return r(conv3x3(v[0], v[1], v[2], 1, 4, 4));
                     },
                     {random_tensor(rng, {16, 2}), random_tensor(rng, {3, 18}), random_tensor(rng, {3})}});
  }
  {
    auto r = reduce({2 * 2 * 2, 3});
    cases.push_back({"avgpool2x2", [r](Tape&, const std::vector<Var>& v) { return r(avgpool2x2(v[0], 2, 4, 4)); },
                     {random_tensor(rng, {2 * 4 * 4, 3})}});
  }
  {
    auto r = reduce({3, 5});
    cases.push_back({"layer_norm", [r](Tape&, const std::vector<Var>& v) {
                       return r(layer_norm(v[0], v[1], v[2]));
                     },
                     {random_tensor(rng, {3, 5}), random_tensor(rng, {5}), random_tensor(rng, {5})}});
  }
  {
    auto r = reduce({2 * 4, 6});
    cases.push_back({"causal_attention", [r](Tape&, const std::vector<Var>& v) {
                       return r(causal_attention(v[0], v[1], v[2], 2, 4, 2));
                     },
                     {random_tensor(rng, {8, 6}), random_tensor(rng, {8, 6}), random_tensor(rng, {8, 6})}});
  }
  {
    auto r = reduce({3, 4});
    cases.push_back({"log_softmax", [r](Tape&, const std::vector<Var>& v) { return r(log_softmax(v[0])); },
                     {random_tensor(rng, {3, 4}, -2.0, 2.0)}});
  }
  {
    std::vector<double> w{0.5, 0.0, 1.5};
    cases.push_back({"softmax_cross_entropy", [w](Tape&, const std::vector<Var>& v) {
                       return softmax_cross_entropy(v[0], v[1], w);
                     },
                     {random_tensor(rng, {3, 4}, -2.0, 2.0), random_tensor(rng, {3, 4}, 0.0, 1.0)}});
  }
  {
    auto r = reduce({3});
    std::vector<int> cols{2, 0, 3};
    cases.push_back({"gather", [r, cols](Tape&, const std::vector<Var>& v) { return r(gather(v[0], cols)); },
                     {random_tensor(rng, {3, 4})}});
  }
  {
    auto r = reduce({3, 4});
    cases.push_back({"embedding", [r](Tape&, const std::vector<Var>& v) { return r(embedding(v[0], v[1])); },
                     {random_tensor(rng, {3, 5}, 0.0, 1.0), random_tensor(rng, {4, 5})}});
  }
  return cases;
}

}  // namespace infusion::testing
