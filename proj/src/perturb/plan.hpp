#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "models/dataset.hpp"
#include "perturb/perturb.hpp"

namespace infusion::perturb {

struct TokenEdit {
  std::size_t position = 0;
  int token = 0;
  friend bool operator==(const TokenEdit&, const TokenEdit&) = default;
};

struct PlanEntry {
  std::size_t doc = 0;
  Tensor delta;                  // continuous plans (features or embedding offset)
  std::vector<TokenEdit> edits;  // discrete plans
  double predicted_df = 0.0;
  std::size_t changes_before_budget = 0;
  Tensor perturbed;              // features plans: the replacement input z + delta
  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

// Entry for a features plan; the stored replacement is z + delta clipped to [lo, hi].
PlanEntry features_entry(std::size_t doc, const Tensor& z, Tensor delta, double lo, double hi, double predicted_df);

struct PerturbationPlan {
  std::string method = "pgd";  // pgd, pgd-discrete, random-noise
  Space space = Space::features;
  double epsilon = 0.0;        // L-inf radius, or change budget for discrete plans
  double alpha = 0.0;
  int steps = 0;
  bool recompute = true;
  Norm norm = Norm::linf;
  double entropy_floor = 0.0;
  double lo = 0.0;             // valid input range for features plans
  double hi = 1.0;
  std::size_t refit_n = 1;
  std::vector<PlanEntry> entries;

  double predicted_df() const;
  friend bool operator==(const PerturbationPlan&, const PerturbationPlan&) = default;
};

const char* space_name(Space s);
Space parse_space(const std::string& name);

nlohmann::json to_json(const PerturbationPlan& plan);
PerturbationPlan plan_from_json(const nlohmann::json& j);
void save_plan(const PerturbationPlan& plan, const std::filesystem::path& path);
PerturbationPlan load_plan(const std::filesystem::path& path);

}  // namespace infusion::perturb
