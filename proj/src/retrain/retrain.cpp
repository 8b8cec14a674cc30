#include "retrain/retrain.hpp"

#include <algorithm>

#include "common/error.hpp"
#include "models/model.hpp"

namespace infusion::harness {

using perturb::Space;

models::Dataset build_infused_dataset(const models::Dataset& data, const perturb::PerturbationPlan& plan) {
  models::Dataset out = data;
  for (const auto& e : plan.entries) {
    require(e.doc < data.size(), ErrorCode::invalid_argument,
            "plan document id " + std::to_string(e.doc) + " out of range for " + std::to_string(data.size()) +
                " documents");
    const models::Example& src = data[e.doc];
    models::Example& dst = out[e.doc];
    switch (plan.space) {
      case Space::features:
        require(e.perturbed.shape() == src.features.shape(), ErrorCode::shape,
                "perturbed input shape differs from document " + std::to_string(e.doc));
        dst.features = e.perturbed;
        break;
      case Space::embedding:
        require(e.delta.rank() == 2 && e.delta.dim(0) == src.tokens.size(), ErrorCode::shape,
                "embedding perturbation rows differ from document " + std::to_string(e.doc) + " length");
        dst.embed_offset = e.delta;
        break;
      case Space::tokens:
        for (const auto& t : e.edits) {
          require(t.position < src.tokens.size(), ErrorCode::invalid_argument,
                  "token edit position " + std::to_string(t.position) + " beyond document " + std::to_string(e.doc));
          require(t.token >= 0, ErrorCode::invalid_argument, "negative token id in plan");
          dst.tokens[t.position] = t.token;
        }
        break;
    }
  }
  return out;
}

models::Checkpoint retrain(const models::Checkpoint& start, std::span<const models::Example> data, int epochs) {
  require(epochs >= 0, ErrorCode::config, "retrain epochs must be non-negative");
  if (epochs == 0) return start;
  auto net = models::make_network(start.spec);
  models::validate_dataset(*net, data);
  return models::continue_training(start, data, epochs).back();
}

std::vector<HorizonResult> retrain_duration_sweep(std::span<const models::Checkpoint> history,
                                                  std::span<const models::Example> infused, std::vector<int> horizons,
                                                  const std::function<double(const models::Checkpoint&)>& metric) {
  require(!history.empty(), ErrorCode::missing_artifact, "no checkpoints for the retrain sweep");
  const models::Checkpoint& final_ck = history.back();
  const int total = final_ck.epoch;
  std::sort(horizons.begin(), horizons.end());
  horizons.erase(std::unique(horizons.begin(), horizons.end()), horizons.end());
  const double before = metric(final_ck);
  std::vector<HorizonResult> out;
  for (int h : horizons) {
    require(h >= 1 && h <= total, ErrorCode::missing_artifact,
            "no checkpoint for horizon " + std::to_string(h) + " (run has " + std::to_string(total) + " epochs)");
    const int start = total - h;
    auto it = std::find_if(history.begin(), history.end(), [&](const models::Checkpoint& c) { return c.epoch == start; });
    require(it != history.end(), ErrorCode::missing_artifact,
            "checkpoint for epoch " + std::to_string(start) + " is missing");
    HorizonResult r;
    r.horizon = h;
    r.start_epoch = start;
    r.before = before;
    r.after = metric(retrain(*it, infused, h));
    r.delta = r.after - r.before;
    out.push_back(r);
  }
  return out;
}

}  // namespace infusion::harness
