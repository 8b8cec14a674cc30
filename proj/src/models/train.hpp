#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "models/dataset.hpp"
#include "models/network.hpp"
#include "models/spec.hpp"

namespace infusion::models {

// Complete training state after `epoch` epochs. The shuffle order of epoch e
// is a pure function of (config.seed, e), so (seed, epoch, step) is the whole
// generator state.
struct Checkpoint {
  ModelSpec spec;
  TrainConfig config;
  std::vector<double> params;
  std::vector<double> moment1;  // SGD momentum buffer or Adam first moment
  std::vector<double> moment2;  // Adam second moment (empty for SGD)
  int epoch = 0;
  std::uint64_t step = 0;
  std::vector<double> epoch_losses;  // mean training loss of each completed epoch

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint initial_checkpoint(const ModelSpec& spec, const TrainConfig& config);

// Returns the initialization checkpoint followed by one checkpoint per epoch.
std::vector<Checkpoint> train(std::span<const Example> data, const ModelSpec& spec, const TrainConfig& config);

// Continues from `start` for `epochs` more epochs with its optimizer state and
// schedule; returns one checkpoint per new epoch (empty when epochs == 0).
std::vector<Checkpoint> continue_training(const Checkpoint& start, std::span<const Example> data, int epochs);

// Deterministic permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace infusion::models
