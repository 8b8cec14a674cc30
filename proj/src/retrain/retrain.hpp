#pragma once

// Infused-dataset construction and checkpoint-resume retraining.

#include <functional>
#include <span>
#include <vector>

#include "models/dataset.hpp"
#include "models/train.hpp"
#include "perturb/plan.hpp"

namespace infusion::harness {

// Replaces each planned document by its perturbed version: the stored
// features replacement, embedding offset delta, or token edits. Labels,
// order and size are unchanged; applying the same plan twice is a no-op.
models::Dataset build_infused_dataset(const models::Dataset& data, const perturb::PerturbationPlan& plan);

// Continues training from `start` for `epochs` epochs; epochs == 0 returns
// `start` unchanged.
models::Checkpoint retrain(const models::Checkpoint& start, std::span<const models::Example> data, int epochs);

struct HorizonResult {
  int horizon = 0;      // retraining epochs
  int start_epoch = 0;
  double before = 0.0;  // metric at the final original checkpoint
  double after = 0.0;   // metric after retraining on the infused data
  double delta = 0.0;
};

// history[i] must be the checkpoint after epoch i of one run. For each
// horizon h, retrains from epoch (final - h) on the infused data. Output is
// sorted by horizon.
std::vector<HorizonResult> retrain_duration_sweep(std::span<const models::Checkpoint> history,
                                                  std::span<const models::Example> infused, std::vector<int> horizons,
                                                  const std::function<double(const models::Checkpoint&)>& metric);

}  // namespace infusion::harness
