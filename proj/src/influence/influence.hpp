#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "curvature/ekfac.hpp"
#include "models/dataset.hpp"
#include "models/network.hpp"
#include "models/train.hpp"

namespace infusion::influence {

enum class MeasurementKind { avg_loss, target_class_logprob, contrastive_token };

const char* measurement_kind_name(MeasurementKind kind);
MeasurementKind parse_measurement_kind(const std::string& name);

struct MeasurementSpec {
  MeasurementKind kind = MeasurementKind::avg_loss;
  models::Dataset set;     // M; for target-class-logprob the probe inputs
  int target_class = -1;   // target-class-logprob
  int probe_token = -1;    // contrastive-token: w_probe
  int target_token = -1;   // contrastive-token: w_target
};

// True for the kinds an attacker increases (log-probability, contrastive).
bool is_maximized(MeasurementKind kind);

// f(theta):
//   avg-loss               mean loss over M
//   target-class-logprob   mean over M of log p(target | x)
//   contrastive-token      sum over M and positions t with tokens[t] = w_probe of
//                          log p(w_target | x_<t) - log p(w_probe | x_<t)
double measurement_value(const models::Network& net, std::span<const double> params, const MeasurementSpec& spec);
std::vector<double> measurement_grad(const models::Network& net, std::span<const double> params,
                                     const MeasurementSpec& spec, double* value_out = nullptr);

// Gradient of the loss-oriented measurement: f itself for avg-loss, -f for
// the maximized kinds, so that a negative influence score always means
// "upweighting this document moves f the attacker's way".
std::vector<double> loss_oriented_grad(const models::Network& net, std::span<const double> params,
                                       const MeasurementSpec& spec);

// Number of (document, position) terms in a contrastive measurement.
std::size_t probe_positions(const MeasurementSpec& spec);

struct InfluenceRecord {
  std::size_t doc = 0;
  double score = 0.0;
};

// score_i = -<g_i, v> with v = (G + lambda I)^{-1} grad f_L.
std::vector<InfluenceRecord> influence_scores(const curvature::EkfacState& state, const models::Checkpoint& ckpt,
                                              const MeasurementSpec& spec, std::span<const models::Example> data);

// Same, from a precomputed v and per-document gradients.
std::vector<InfluenceRecord> scores_from_grads(std::span<const double> v,
                                               const std::vector<std::vector<double>>& doc_grads);

// Scores for several loss-oriented directions in one pass over the documents,
// without keeping every per-document gradient.
std::vector<std::vector<InfluenceRecord>> scores_for_directions(const models::Network& net,
                                                                std::span<const double> params,
                                                                std::span<const models::Example> data,
                                                                const std::vector<std::vector<double>>& vs);

// Diagnostics: scores[doc][m] for each measurement example separately.
std::vector<std::vector<double>> pairwise_scores(const curvature::EkfacState& state, const models::Checkpoint& ckpt,
                                                 const MeasurementSpec& spec,
                                                 std::span<const models::Example> data);

enum class Strategy { most_negative, random, most_positive, most_absolute, last_k };

const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);

// Exactly k distinct ids. Ties break toward the lower doc id; last-k takes the
// final k documents in dataset order.
std::vector<std::size_t> select_documents(std::span<const InfluenceRecord> records, Strategy strategy, std::size_t k,
                                          std::uint64_t seed);

// doc_id,score,rank with rank 1 = most negative.
void write_rankings_csv(std::span<const InfluenceRecord> records, const std::filesystem::path& path);

}  // namespace infusion::influence
