#include "experiments/image_attack.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <cmath>
#include <limits>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "models/model.hpp"
#include "retrain/retrain.hpp"

namespace infusion::experiments {

using models::Dataset;
using models::Example;

const char* attack_method_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::infusion: return "infusion";
    case AttackMethod::random_noise: return "random-noise";
    case AttackMethod::probe_insert_single: return "probe-insert-single";
    case AttackMethod::probe_insert_k: return "probe-insert-k";
  }
  return "?";
}

AttackMethod parse_attack_method(const std::string& name) {
  for (auto m : {AttackMethod::infusion, AttackMethod::random_noise, AttackMethod::probe_insert_single,
                 AttackMethod::probe_insert_k})
    if (name == attack_method_name(m)) return m;
  fail(ErrorCode::config, "unknown attack method '" + name +
                              "' (expected infusion, random-noise, probe-insert-single or probe-insert-k)");
}

AttackModel prepare_attack_model(std::string name, std::vector<models::Checkpoint> history, const Dataset& train,
                                 curvature::FisherMode mode, double damping, std::uint64_t seed,
                                 bool keep_doc_grads) {
  require(!history.empty(), ErrorCode::missing_artifact, "attack model has no checkpoints");
  AttackModel m;
  m.name = std::move(name);
  m.history = std::move(history);
  m.state = curvature::build_ekfac(m.history.back(), train, mode, seed, damping);
  if (keep_doc_grads) {
    auto net = models::make_network(m.history.back().spec);
    m.doc_grads = models::per_example_grads(*net, m.history.back().params, train);
  }
  return m;
}

std::vector<ProbeTarget> all_target_pairs(const Dataset& test, std::size_t probes, int classes) {
  require(probes <= test.size(), ErrorCode::invalid_argument,
          "asked for " + std::to_string(probes) + " probes from a test set of " + std::to_string(test.size()));
  std::vector<ProbeTarget> out;
  for (std::size_t i = 0; i < probes; ++i)
    for (int t = 0; t < classes; ++t)
      if (t != test[i].label) out.push_back({i, t});
  return out;
}

namespace {

std::vector<double> probs(const models::Network& net, std::span<const double> params, const Example& x) {
  Tensor lp = models::log_probs(net, params, x);
  std::vector<double> p(lp.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp[i]);
  return p;
}

influence::MeasurementSpec target_measurement(const Example& probe, int target) {
  influence::MeasurementSpec m;
  m.kind = influence::MeasurementKind::target_class_logprob;
  m.set = {probe};
  m.target_class = target;
  return m;
}

}  // namespace

PairPlan plan_pair(const AttackModel& source, const Dataset& train, const Example& probe, int target,
                   const ImageAttackConfig& cfg, std::uint64_t pair_seed) {
  const auto& ck = source.history.back();
  auto net = models::make_network(ck.spec);
  auto m = target_measurement(probe, target);
  // f is maximized, so the loss-oriented direction is -grad f
  auto v = curvature::ihvp(source.state, influence::measurement_grad(*net, ck.params, m));
  std::vector<double> v_loss(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) v_loss[i] = -v[i];
  auto scores = source.doc_grads.empty()
                    ? influence::scores_for_directions(*net, ck.params, train, {v_loss})[0]
                    : influence::scores_from_grads(v_loss, source.doc_grads);

  PairPlan out;
  out.selected = influence::select_documents(scores, cfg.strategy, cfg.k, pair_seed);
  auto& plan = out.plan;
  plan.method = attack_method_name(cfg.method);
  plan.epsilon = cfg.pgd.epsilon;
  plan.alpha = cfg.pgd.alpha;
  plan.steps = cfg.pgd.steps;
  plan.recompute = cfg.pgd.recompute;
  plan.norm = cfg.pgd.norm;
  plan.lo = cfg.pgd.lo;
  plan.hi = cfg.pgd.hi;
  plan.refit_n = train.size();
  if (cfg.method == AttackMethod::infusion) {
    perturb::PertGradOptions opt;
    opt.n = train.size();
    plan.entries.resize(out.selected.size());
    parallel_for(out.selected.size(), [&](std::size_t j) {
      const auto i = out.selected[j];
      auto r = perturb::pgd_continuous(*net, ck.params, train[i], perturb::Space::features, v, cfg.pgd, opt);
      plan.entries[j] = perturb::features_entry(i, train[i].features, r.delta, cfg.pgd.lo, cfg.pgd.hi, r.predicted_df);
    });
  } else if (cfg.method == AttackMethod::random_noise) {
    // same L-inf radius that sign-PGD can reach
    const double eps = std::min(cfg.pgd.epsilon, cfg.pgd.alpha * cfg.pgd.steps);
    for (auto i : out.selected)
      plan.entries.push_back(perturb::features_entry(
          i, train[i].features,
          perturb::baseline_random_noise(train[i].features, eps, stream_key(pair_seed, {i}), cfg.pgd.lo, cfg.pgd.hi),
          cfg.pgd.lo, cfg.pgd.hi, 0.0));
  }
  out.predicted_df = plan.predicted_df();
  return out;
}

ExperimentResult run_pair(const AttackModel& source, const AttackModel& evaluator, const Dataset& train,
                          const Dataset& test, const ProbeTarget& pair, const ImageAttackConfig& cfg,
                          std::size_t pair_index, const std::string& kind) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.kind = kind;
  r.method = attack_method_name(cfg.method);
  r.strategy = influence::strategy_name(cfg.strategy);
  r.group = source.name == evaluator.name ? source.name : source.name + "->" + evaluator.name;
  r.config_hash = cfg.config_hash;
  r.experiment_id = kind + "/" + r.method + "/" + r.strategy + "/" + r.group + "/p" + std::to_string(pair.probe) +
                    "-t" + std::to_string(pair.target);
  r.probe = {{"test_index", pair.probe}};
  r.target = {{"class", pair.target}};
  r.target_index = pair.target;
  try {
    require(pair.probe < test.size(), ErrorCode::invalid_argument, "probe index out of range");
    const Example& probe = test[pair.probe];
    r.true_index = probe.label;
    r.probe["label"] = probe.label;
    const std::uint64_t pair_seed = stream_key(cfg.seed, {0x9A1, pair_index});
    auto pp = plan_pair(source, train, probe, pair.target, cfg, pair_seed);

    Dataset infused;
    if (cfg.method == AttackMethod::probe_insert_single || cfg.method == AttackMethod::probe_insert_k) {
      std::vector<std::size_t> ids = pp.selected;
      if (cfg.method == AttackMethod::probe_insert_single) ids.resize(std::min<std::size_t>(1, ids.size()));
      infused = perturb::baseline_probe_insert(train, probe.features, pair.target, ids);
    } else {
      infused = harness::build_infused_dataset(train, pp.plan);
    }
    const auto& hist = evaluator.history;
    require(static_cast<int>(hist.size()) > cfg.retrain_epochs, ErrorCode::missing_artifact,
            "evaluator has no checkpoint " + std::to_string(cfg.retrain_epochs) + " epochs before the end");
    const auto& start = hist[hist.size() - 1 - static_cast<std::size_t>(cfg.retrain_epochs)];
    auto net = models::make_network(hist.back().spec);
    r.before = probs(*net, hist.back().params, probe);
    auto after_ck = harness::retrain(start, infused, cfg.retrain_epochs);
    r.after = probs(*net, after_ck.params, probe);
    derive_metrics(r);
    r.predicted_df = pp.predicted_df;
    r.actual_df = std::log(r.after[static_cast<std::size_t>(pair.target)]) -
                  std::log(r.before[static_cast<std::size_t>(pair.target)]);
    r.extra["selected"] = pp.selected;
    if (!cfg.plan_dir.empty()) {
      std::string name = r.experiment_id;
      for (char& ch : name)
        if (ch == '/' || ch == '>') ch = '_';
      const auto path = std::filesystem::path(cfg.plan_dir) / (name + ".json");
      perturb::save_plan(pp.plan, path);
      r.extra["plan"] = path.string();
    }
  } catch (const Error& e) {
    r.ok = false;
    r.error = e.what();
    r.before.clear();
    r.after.clear();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<ExperimentResult> run_image_attack(const AttackModel& model, const Dataset& train, const Dataset& test,
                                               const std::vector<ProbeTarget>& pairs, const ImageAttackConfig& cfg) {
  std::vector<ExperimentResult> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out.push_back(run_pair(model, model, train, test, pairs[i], cfg, i, "image-attack"));
  return out;
}

TransferOutput run_transfer(const AttackModel& a, const AttackModel& b, const Dataset& train, const Dataset& test,
                            const std::vector<ProbeTarget>& pairs, const ImageAttackConfig& cfg, int classes) {
  require(a.history.back().spec.num_classes == classes && b.history.back().spec.num_classes == classes,
          ErrorCode::config, "transfer models disagree on the class count");
  TransferOutput out;
  const AttackModel* models_[] = {&a, &b};
  for (const auto* src : models_)
    for (const auto* ev : models_) {
      TransferMatrix m;
      m.source = src->name;
      m.evaluator = ev->name;
      m.classes = classes;
      m.best_dp.assign(static_cast<std::size_t>(classes * classes), std::numeric_limits<double>::quiet_NaN());
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto r = run_pair(*src, *ev, train, test, pairs[i], cfg, i, "transfer");
        if (r.ok) {
          double& cell = m.best_dp[static_cast<std::size_t>(r.true_index * classes + r.target_index)];
          if (std::isnan(cell) || r.dp_target > cell) cell = r.dp_target;
        }
        out.results.push_back(std::move(r));
      }
      out.matrices.push_back(std::move(m));
    }
  return out;
}

}  // namespace infusion::experiments
