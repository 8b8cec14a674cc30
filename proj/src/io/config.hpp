#pragma once

// Run configuration: a JSON document merged over a complete defaults tree.
// Unknown keys and type mismatches are errors; the resolved tree (every
// default, derived model geometry and the environment overrides) is what the
// CLI writes next to its artifacts.

#include <filesystem>
#include <string>

#include "curvature/ekfac.hpp"
#include "experiments/cipher_attack.hpp"
#include "experiments/image_attack.hpp"
#include "experiments/token_bias.hpp"
#include "json.hpp"
#include "models/spec.hpp"

namespace infusion::io {

// Keys that must be present in the user file.
inline constexpr const char* kRequiredKeys[] = {"data.source", "model.arch"};

nlohmann::json default_config();

struct RunConfig {
  nlohmann::json user;  // the document as given, before defaults
  nlohmann::json resolved;

  std::uint64_t seed() const;
  std::filesystem::path run_dir() const;
  std::filesystem::path results_path() const;  // INFUSION_RESULTS overrides run_dir/results.jsonl
  std::string data_source() const;

  models::ModelSpec model() const;
  models::ModelSpec transfer_model() const;
  models::TrainConfig train() const;
  double damping() const;
  curvature::FisherMode fisher() const;

  experiments::ImageAttackConfig attack() const;
  experiments::CipherAttackConfig cipher() const;
  experiments::TokenBiasConfig token_bias() const;
};

// Validates and resolves a parsed document.
RunConfig resolve_config(const nlohmann::json& user);
// Reads a JSON file; errors name the file.
RunConfig parse_config(const std::filesystem::path& path);

// Edit distance, for "did you mean" suggestions.
std::size_t edit_distance(const std::string& a, const std::string& b);

struct Datasets {
  models::Dataset train, test;
};
Datasets load_datasets(const RunConfig& cfg);

}  // namespace infusion::io
