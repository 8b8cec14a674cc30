#include "experiments/cipher_attack.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "experiments/stats.hpp"
#include "models/model.hpp"
#include "retrain/retrain.hpp"

namespace infusion::experiments {

using models::Dataset;

std::vector<ShiftPair> all_shift_pairs(int n) {
  std::vector<ShiftPair> out;
  for (int p = 0; p < n; ++p)
    for (int t = 0; t < n; ++t)
      if (p != t) out.push_back({p, t});
  return out;
}

Dataset shift_measurement_set(int n, int probe, int target, const std::vector<std::vector<int>>& plains) {
  const CipherVocab v{n};
  Dataset m;
  for (const auto& p : plains) m.push_back(cipher_document(v, probe, p, caesar_encrypt(p, target, n)));
  return m;
}

std::vector<double> shift_probs(const std::vector<double>& ce_row) {
  require(!ce_row.empty(), ErrorCode::empty, "empty CE row");
  const double lo = *std::min_element(ce_row.begin(), ce_row.end());
  std::vector<double> p(ce_row.size());
  double z = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) z += p[j] = std::exp(lo - ce_row[j]);
  for (auto& x : p) x /= z;
  return p;
}

namespace {

struct PairSetup {
  influence::MeasurementSpec m;
  std::vector<double> v_loss;
  std::string error;
};

}  // namespace

CipherRun run_cipher(const AttackModel& model, const Dataset& train, int n, const std::vector<ShiftPair>& pairs,
                     const CipherAttackConfig& cfg) {
  const auto& hist = model.history;
  require(static_cast<int>(hist.size()) > cfg.retrain_epochs, ErrorCode::missing_artifact,
          "cipher model has no checkpoint " + std::to_string(cfg.retrain_epochs) + " epochs before the end");
  const auto& ck = hist.back();
  const auto& start = hist[hist.size() - 1 - static_cast<std::size_t>(cfg.retrain_epochs)];
  auto net = models::make_network(ck.spec);
  const auto plains = gen_plaintexts(n, cfg.eval_plains, cfg.min_len, cfg.max_len, stream_key(cfg.seed, {0xCE}));

  CipherRun run;
  run.before = ce_matrix(*net, ck.params, n, plains);

  std::vector<PairSetup> setup(pairs.size());
  std::vector<std::vector<double>> dirs;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& s = setup[i];
    try {
      require(pairs[i].probe >= 0 && pairs[i].probe < n && pairs[i].target >= 0 && pairs[i].target < n,
              ErrorCode::invalid_argument, "shift outside the alphabet");
      s.m.kind = influence::MeasurementKind::avg_loss;
      s.m.set = shift_measurement_set(
          n, pairs[i].probe, pairs[i].target,
          gen_plaintexts(n, cfg.measurement_docs, cfg.min_len, cfg.max_len, stream_key(cfg.seed, {0x3EA, i})));
      s.v_loss = curvature::ihvp(model.state, influence::measurement_grad(*net, ck.params, s.m));
    } catch (const Error& e) {
      s.error = e.what();
      s.v_loss.assign(ck.params.size(), 0.0);
    }
    dirs.push_back(s.v_loss);
  }
  auto scores = influence::scores_for_directions(*net, ck.params, train, dirs);
  dirs.clear();

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto [sp, st] = pairs[i];
    ExperimentResult r;
    r.kind = "cipher";
    r.method = "infusion";
    r.strategy = influence::strategy_name(cfg.strategy);
    r.group = "N=" + std::to_string(n);
    r.config_hash = cfg.config_hash;
    r.experiment_id = "cipher/N" + std::to_string(n) + "/s" + std::to_string(sp) + "-t" + std::to_string(st);
    r.probe = {{"shift", sp}, {"n", n}};
    r.target = {{"shift", st}};
    r.true_index = sp;
    r.target_index = st;
    try {
      if (!setup[i].error.empty()) fail(ErrorCode::invalid_argument, setup[i].error);
      const auto& m = setup[i].m;
      auto selected = influence::select_documents(scores[i], cfg.strategy, cfg.k, stream_key(cfg.seed, {0x9A1, i}));
      std::vector<double> v(setup[i].v_loss.size());
      for (std::size_t j = 0; j < v.size(); ++j) v[j] = -setup[i].v_loss[j];  // lowering the loss is the goal

      perturb::PerturbationPlan plan;
      plan.method = "infusion";
      plan.space = perturb::Space::embedding;
      plan.epsilon = cfg.pgd.epsilon;
      plan.alpha = cfg.pgd.alpha;
      plan.steps = cfg.pgd.steps;
      plan.recompute = cfg.pgd.recompute;
      plan.norm = cfg.pgd.norm;
      plan.refit_n = train.size();
      plan.entries.resize(selected.size());
      perturb::PertGradOptions opt;
      opt.n = train.size();
      parallel_for(selected.size(), [&](std::size_t j) {
        auto res = perturb::pgd_continuous(*net, ck.params, train[selected[j]], perturb::Space::embedding, v,
                                           cfg.pgd, opt);
        plan.entries[j] = {selected[j], std::move(res.delta), {}, res.predicted_df, 0, {}};
      });

      auto after_ck = harness::retrain(start, harness::build_infused_dataset(train, plan), cfg.retrain_epochs);
      auto lp = [&](const std::vector<double>& params) {
        return [&net, &params](const models::Example& e) { return models::log_probs(*net, params, e); };
      };
      std::vector<double> row_before(run.before.values.begin() + sp * n, run.before.values.begin() + (sp + 1) * n);
      auto row_after = ce_row(lp(after_ck.params), n, sp, plains);
      r.before = shift_probs(row_before);
      r.after = shift_probs(row_after);
      derive_metrics(r);
      r.predicted_df = plan.predicted_df();
      r.actual_df = influence::measurement_value(*net, ck.params, m) -
                    influence::measurement_value(*net, after_ck.params, m);
      r.extra["ce_before"] = row_before;
      r.extra["ce_after"] = row_after;
      r.extra["selected"] = selected;
    } catch (const Error& e) {
      r.ok = false;
      r.error = e.what();
      r.before.clear();
      r.after.clear();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.results.push_back(std::move(r));
  }
  run.analysis = analyze_cipher(run.before, run.results);
  return run;
}

CipherAnalysis analyze_cipher(const CEMatrix& before, const std::vector<ExperimentResult>& results) {
  const int n = before.n;
  CipherAnalysis a;
  a.n = n;
  a.circulant = circulant_score(before);
  int rows = 0;
  for (int i = 0; i < n; ++i) {
    bool min = true;
    for (int j = 0; j < n; ++j) min = min && (j == i || before.at(i, j) > before.at(i, i));
    rows += min;
  }
  a.diagonal_min_rate = n ? static_cast<double>(rows) / n : 0.0;

  std::vector<double> ce, dce;
  double shared = 0.0, coprime = 0.0;
  for (const auto& r : results) {
    if (!r.ok || !r.extra.contains("ce_before") || !r.extra.contains("ce_after")) continue;
    const int sp = r.true_index, st = r.target_index;
    CEMatrix b{n, before.values}, aft{n, before.values};
    const auto rb = r.extra["ce_before"].get<std::vector<double>>();
    const auto ra = r.extra["ce_after"].get<std::vector<double>>();
    require(static_cast<int>(rb.size()) == n && static_cast<int>(ra.size()) == n, ErrorCode::format,
            r.experiment_id + ": CE rows do not match the alphabet");
    for (int j = 0; j < n; ++j) {
      b.at(sp, j) = rb[static_cast<std::size_t>(j)];
      aft.at(sp, j) = ra[static_cast<std::size_t>(j)];
    }
    const double score = targeting_score(b, aft, sp, st);
    a.targeting[{sp, st}] = score;
    ce.push_back(b.at(sp, st));
    dce.push_back(aft.at(sp, st) - b.at(sp, st));
    if (std::gcd(((st - sp) % n + n) % n, n) > 1) {
      shared += score;
      ++a.shared_factor_pairs;
    } else {
      coprime += score;
      ++a.coprime_pairs;
    }
  }
  if (!a.targeting.empty()) a.gcd = gcd_group_analysis(a.targeting, n);
  if (a.shared_factor_pairs) a.mean_shared_factor = shared / static_cast<double>(a.shared_factor_pairs);
  if (a.coprime_pairs) a.mean_coprime = coprime / static_cast<double>(a.coprime_pairs);
  if (ce.size() >= 2) a.ce_dce_pearson = pearson(ce, dce);
  return a;
}

}  // namespace infusion::experiments
