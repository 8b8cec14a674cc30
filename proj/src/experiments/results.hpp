#pragma once

// Experiment records: one JSON object per line, plus the summary CSV and the
// figure-ready report derived from them.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace infusion::experiments {

struct ExperimentResult {
  std::string experiment_id;
  std::string kind;      // image-attack, transfer, cipher, token-bias, retrain-duration
  std::string method;    // infusion, random-noise, probe-insert-single, probe-insert-k
  std::string strategy;  // document selection strategy
  std::string group;     // free-form arm label (e.g. "res-cnn->cnn", "horizon=3")
  std::string config_hash;
  nlohmann::json probe = nlohmann::json::object();
  nlohmann::json target = nlohmann::json::object();
  int true_index = -1;    // into the probability vectors; -1 when there is no true class
  int target_index = -1;
  std::vector<double> before;  // normalized probability vectors
  std::vector<double> after;
  double dp_target = 0.0;
  double dp_true = 0.0;
  double log_odds_shift = 0.0;
  int top1_before = -1;
  int top1_after = -1;
  double predicted_df = 0.0;
  double actual_df = 0.0;
  double seconds = 0.0;
  bool ok = true;
  std::string error;
  nlohmann::json extra = nlohmann::json::object();
};

// Fills dp_target, dp_true, log_odds_shift and the top-1 fields from the
// probability vectors.
void derive_metrics(ExperimentResult& r);

// Checks normalization and that the derived fields match the vectors.
// Throws Error(format) naming the experiment.
void check_consistency(const ExperimentResult& r);

// Target-probability change minus the mean change over the other classes.
double one_vs_rest(const ExperimentResult& r);

nlohmann::json to_json(const ExperimentResult& r);
ExperimentResult result_from_json(const nlohmann::json& j);

void append_result(const std::filesystem::path& store, const ExperimentResult& r);
// Loads and checks every record; a missing store loads as empty.
std::vector<ExperimentResult> load_results(const std::filesystem::path& store);

struct SummaryRow {
  std::string kind, method, strategy, group;
  std::size_t n = 0;       // successful experiments
  std::size_t failed = 0;
  double mean_dp_target = 0.0, sd_dp_target = 0.0;
  double mean_dp_true = 0.0;
  double mean_one_vs_rest = 0.0;
  double cohens_d = 0.0;
  bool d_degenerate = false;
  double mean_log_odds = 0.0;
  double positive_rate = 0.0;
  double top1_target_before = 0.0, top1_target_after = 0.0;
  std::size_t flips = 0, degradations = 0;
  double chi2 = 0.0;
  double wilcoxon_p = 1.0;
  double mean_predicted_df = 0.0, mean_actual_df = 0.0;
};

// One row per (kind, method, strategy, group), in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<ExperimentResult>& results);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
// Summary plus per-arm delta lists and (true, target) mean-delta grids.
nlohmann::json figure_report(const std::vector<ExperimentResult>& results);

std::string config_hash(const nlohmann::json& config);

}  // namespace infusion::experiments
