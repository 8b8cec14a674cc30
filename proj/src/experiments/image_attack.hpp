#pragma once

// Image-classification attack: influence selection, PGD on the selected
// training images, one-epoch retrain and before/after probabilities on the
// probe. Also the baselines, the selection ablation and the transfer grid.

#include <cstdint>
#include <string>
#include <vector>

#include "curvature/ekfac.hpp"
#include "experiments/results.hpp"
#include "influence/influence.hpp"
#include "models/train.hpp"
#include "perturb/plan.hpp"

namespace infusion::experiments {

enum class AttackMethod { infusion, random_noise, probe_insert_single, probe_insert_k };
const char* attack_method_name(AttackMethod m);
AttackMethod parse_attack_method(const std::string& name);

// A trained model with everything the attack reuses across pairs.
struct AttackModel {
  std::string name;
  std::vector<models::Checkpoint> history;  // history[e] = after epoch e of one straight run
  curvature::EkfacState state;              // at history.back()
  std::vector<std::vector<double>> doc_grads;  // per-document gradients at history.back(), or empty
};

// Per-document gradients are only kept when `keep_doc_grads` is set.
AttackModel prepare_attack_model(std::string name, std::vector<models::Checkpoint> history,
                                 const models::Dataset& train, curvature::FisherMode mode, double damping,
                                 std::uint64_t seed, bool keep_doc_grads = true);

struct ImageAttackConfig {
  std::size_t k = 100;
  influence::Strategy strategy = influence::Strategy::most_negative;
  AttackMethod method = AttackMethod::infusion;
  perturb::PgdConfig pgd{1.0, 0.001, 50, perturb::Norm::linf, true, 0.0, 1.0};
  int retrain_epochs = 1;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string plan_dir;  // when set, each pair's plan is saved there for audit and replay
};

struct ProbeTarget {
  std::size_t probe = 0;  // index into the test set
  int target = 0;
};

// `pairs` drawn deterministically: `probes` test images (skipping none), each
// with every target class different from its label.
std::vector<ProbeTarget> all_target_pairs(const models::Dataset& test, std::size_t probes, int classes);

// Perturbation plan computed on `source` for one pair (for the baselines the
// plan is the noise or empty; probe insertion is applied in run_pair).
struct PairPlan {
  std::vector<std::size_t> selected;
  perturb::PerturbationPlan plan;
  double predicted_df = 0.0;
};
PairPlan plan_pair(const AttackModel& source, const models::Dataset& train, const models::Example& probe, int target,
                   const ImageAttackConfig& cfg, std::uint64_t pair_seed);

// Applies a plan to `evaluator` (retrain from its checkpoint) and records the
// probe probabilities. Errors are caught and recorded as a failed result.
ExperimentResult run_pair(const AttackModel& source, const AttackModel& evaluator, const models::Dataset& train,
                          const models::Dataset& test, const ProbeTarget& pair, const ImageAttackConfig& cfg,
                          std::size_t pair_index, const std::string& kind);

std::vector<ExperimentResult> run_image_attack(const AttackModel& model, const models::Dataset& train,
                                               const models::Dataset& test, const std::vector<ProbeTarget>& pairs,
                                               const ImageAttackConfig& cfg);

struct TransferMatrix {
  std::string source, evaluator;
  int classes = 0;
  std::vector<double> best_dp;  // classes x classes, NaN where no pair ran
};

struct TransferOutput {
  std::vector<TransferMatrix> matrices;  // (a->a, a->b, b->a, b->b)
  std::vector<ExperimentResult> results;
};

TransferOutput run_transfer(const AttackModel& a, const AttackModel& b, const models::Dataset& train,
                            const models::Dataset& test, const std::vector<ProbeTarget>& pairs,
                            const ImageAttackConfig& cfg, int classes);

}  // namespace infusion::experiments
