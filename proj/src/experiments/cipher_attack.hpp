#pragma once

// Caesar-cipher attack: for a (probe shift, target shift) pair the
// measurement is the loss of completions that use the target shift after a
// prompt claiming the probe shift. Selected documents get an embedding-space
// perturbation that is applied during the one-epoch retrain.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "experiments/cipher.hpp"
#include "experiments/image_attack.hpp"
#include "experiments/results.hpp"
#include "perturb/perturb.hpp"

namespace infusion::experiments {

struct CipherAttackConfig {
  std::size_t k = 20;
  influence::Strategy strategy = influence::Strategy::most_negative;
  perturb::PgdConfig pgd{1.0, 0.1, 10, perturb::Norm::linf, true, 0.0, 0.0};
  int retrain_epochs = 1;
  std::size_t measurement_docs = 8;  // plaintexts in the measurement set
  std::size_t eval_plains = 10;      // plaintexts behind each CE cell
  std::size_t min_len = 3, max_len = 6;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct ShiftPair {
  int probe = 0;
  int target = 0;
};
// Every ordered pair with probe != target.
std::vector<ShiftPair> all_shift_pairs(int n);

// Prompts claiming shift `probe`, completed with the shift-`target` encryption.
models::Dataset shift_measurement_set(int n, int probe, int target, const std::vector<std::vector<int>>& plains);

// Per-shift probabilities from a CE row: softmax of -CE.
std::vector<double> shift_probs(const std::vector<double>& ce_row);

struct CipherAnalysis {
  int n = 0;
  CirculantScore circulant;
  double diagonal_min_rate = 0.0;  // rows whose diagonal is the row minimum
  std::map<std::pair<int, int>, double> targeting;
  std::vector<GcdBucket> gcd;
  double mean_shared_factor = 0.0;  // mean targeting score over gcd(ds, N) > 1
  double mean_coprime = 0.0;        // mean targeting score over gcd(ds, N) = 1
  std::size_t shared_factor_pairs = 0, coprime_pairs = 0;
  double ce_dce_pearson = 0.0;      // original CE vs its change, at the (probe, target) cells
};

struct CipherRun {
  CEMatrix before;
  std::vector<ExperimentResult> results;
  CipherAnalysis analysis;
};

CipherRun run_cipher(const AttackModel& model, const models::Dataset& train, int n, const std::vector<ShiftPair>& pairs,
                     const CipherAttackConfig& cfg);

// Recomputes the analysis from stored results (the CE rows live in `extra`).
CipherAnalysis analyze_cipher(const CEMatrix& before, const std::vector<ExperimentResult>& results);

}  // namespace infusion::experiments
