#include "perturb/plan.hpp"

#include <algorithm>
#include <fstream>

#include "common/error.hpp"

namespace infusion::perturb {

using nlohmann::json;

double PerturbationPlan::predicted_df() const {
  double s = 0.0;
  for (const auto& e : entries) s += e.predicted_df;
  return s;
}

PlanEntry features_entry(std::size_t doc, const Tensor& z, Tensor delta, double lo, double hi, double predicted_df) {
  require(z.shape() == delta.shape(), ErrorCode::shape, "perturbation shape differs from the document");
  PlanEntry e;
  e.doc = doc;
  e.perturbed = z;
  for (std::size_t i = 0; i < z.size(); ++i) e.perturbed[i] = std::clamp(z[i] + delta[i], lo, hi);
  e.delta = std::move(delta);
  e.predicted_df = predicted_df;
  return e;
}

const char* space_name(Space s) {
  switch (s) {
    case Space::features: return "features";
    case Space::embedding: return "embedding";
    case Space::tokens: return "tokens";
  }
  return "?";
}

Space parse_space(const std::string& name) {
  for (Space s : {Space::features, Space::embedding, Space::tokens})
    if (name == space_name(s)) return s;
  fail(ErrorCode::config, "unknown perturbation space '" + name + "' (expected features, embedding or tokens)");
}

json to_json(const PerturbationPlan& p) {
  json entries = json::array();
  for (const auto& e : p.entries) {
    json j{{"doc", e.doc}, {"predicted_df", e.predicted_df}};
    if (!e.delta.empty()) j["delta"] = {{"shape", e.delta.shape()}, {"data", e.delta.storage()}};
    if (!e.perturbed.empty()) j["perturbed"] = {{"shape", e.perturbed.shape()}, {"data", e.perturbed.storage()}};
    if (p.space == Space::tokens) {
      json edits = json::array();
      for (const auto& t : e.edits) edits.push_back({t.position, t.token});
      j["edits"] = edits;
      j["changes_before_budget"] = e.changes_before_budget;
    }
    entries.push_back(std::move(j));
  }
  return {{"method", p.method},
          {"space", space_name(p.space)},
          {"epsilon", p.epsilon},
          {"pgd",
           {{"alpha", p.alpha},
            {"steps", p.steps},
            {"recompute", p.recompute},
            {"norm", p.norm == Norm::linf ? "linf" : "l2"},
            {"entropy_floor", p.entropy_floor}}},
          {"range", {p.lo, p.hi}},
          {"refit_n", p.refit_n},
          {"predicted_df", p.predicted_df()},
          {"entries", entries}};
}

PerturbationPlan plan_from_json(const json& j) {
  PerturbationPlan p;
  try {
    p.method = j.at("method").get<std::string>();
    p.space = parse_space(j.at("space").get<std::string>());
    p.epsilon = j.at("epsilon").get<double>();
    const auto& g = j.at("pgd");
    p.alpha = g.at("alpha").get<double>();
    p.steps = g.at("steps").get<int>();
    p.recompute = g.at("recompute").get<bool>();
    const auto norm = g.at("norm").get<std::string>();
    require(norm == "linf" || norm == "l2", ErrorCode::format, "unknown norm '" + norm + "'");
    p.norm = norm == "linf" ? Norm::linf : Norm::l2;
    p.entropy_floor = g.value("entropy_floor", 0.0);
    p.lo = j.at("range").at(0).get<double>();
    p.hi = j.at("range").at(1).get<double>();
    p.refit_n = j.at("refit_n").get<std::size_t>();
    for (const auto& e : j.at("entries")) {
      PlanEntry x;
      x.doc = e.at("doc").get<std::size_t>();
      x.predicted_df = e.at("predicted_df").get<double>();
      if (e.contains("delta"))
        x.delta = Tensor(e["delta"].at("shape").get<Shape>(), e["delta"].at("data").get<std::vector<double>>());
      if (e.contains("perturbed"))
        x.perturbed =
            Tensor(e["perturbed"].at("shape").get<Shape>(), e["perturbed"].at("data").get<std::vector<double>>());
      if (e.contains("edits"))
        for (const auto& t : e["edits"]) x.edits.push_back({t.at(0).get<std::size_t>(), t.at(1).get<int>()});
      x.changes_before_budget = e.value("changes_before_budget", std::size_t{0});
      p.entries.push_back(std::move(x));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::format, std::string("malformed perturbation plan: ") + e.what());
  }
  return p;
}

void save_plan(const PerturbationPlan& plan, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out << to_json(plan).dump(1) << '\n';
}

PerturbationPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::missing_artifact, "perturbation plan not found: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::format, path.string() + ": " + e.what());
  }
  return plan_from_json(j);
}

}  // namespace infusion::perturb
