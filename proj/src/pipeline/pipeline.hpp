#pragma once

// CLI stages. Each stage reads the artifacts of earlier stages from the run
// directory and writes its own, so any stage can be rerun on its own:
//
//   <run_dir>/config.resolved.json
//   <run_dir>/<variant>/checkpoints/epoch_NNN.ckpt   train
//   <run_dir>/<variant>/ekfac.bin                    curvature
//   <run_dir>/influence/rankings_p<probe>_t<target>.csv
//   <run_dir>/plans/...                              attack, transfer
//   <run_dir>/transfer/matrices.json
//   <run_dir>/cipher/analysis.json
//   results store (<run_dir>/results.jsonl or INFUSION_RESULTS)
//   <out>/summary.csv, <out>/report.json             report
//
// Variant "main" uses the `model` section, "transfer" uses `transfer.model`.

#include <filesystem>
#include <string>
#include <vector>

#include "experiments/image_attack.hpp"
#include "io/config.hpp"

namespace infusion::pipeline {

std::filesystem::path variant_dir(const io::RunConfig& cfg, const std::string& variant);

// Returns the number of checkpoints written.
std::size_t train_stage(const io::RunConfig& cfg, const std::string& variant);
void curvature_stage(const io::RunConfig& cfg, const std::string& variant);

std::vector<models::Checkpoint> load_history(const io::RunConfig& cfg, const std::string& variant);
experiments::AttackModel load_attack_model(const io::RunConfig& cfg, const std::string& variant, bool keep_doc_grads);

// Writes the ranking CSV for the configured influence.probe / influence.target
// and returns its path.
std::filesystem::path influence_stage(const io::RunConfig& cfg);

// Each returns the number of results appended to the store.
std::size_t attack_stage(const io::RunConfig& cfg);
std::size_t transfer_stage(const io::RunConfig& cfg);
std::size_t cipher_stage(const io::RunConfig& cfg);
std::size_t token_bias_stage(const io::RunConfig& cfg);

// Writes summary.csv and report.json into out_dir; returns the record count.
// An empty or missing store is an error.
std::size_t report_stage(const std::filesystem::path& results, const std::filesystem::path& out_dir);

}  // namespace infusion::pipeline
