#include "experiments/token_bias.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "models/model.hpp"
#include "retrain/retrain.hpp"

namespace infusion::experiments {

using models::Dataset;
using models::Example;

namespace {

const std::vector<std::string> kAnimals = {"cat", "dog", "bird", "fish", "fox", "owl", "bear", "frog"};
const std::vector<std::string> kAdjectives = {"little", "big", "happy", "old"};
const std::vector<std::string> kVerbs = {"liked", "found", "ate", "wanted"};
const std::vector<std::string> kObjects = {"ball", "tree", "sun", "box", "cake", "hat"};

template <class T>
const T& pick(Rng& rng, const std::vector<T>& xs) {
  return xs[uniform_index(rng, xs.size())];
}

}  // namespace

int StoryVocab::id(const std::string& word) const {
  auto it = std::find(words.begin(), words.end(), word);
  require(it != words.end(), ErrorCode::invalid_argument, "word '" + word + "' is not in the vocabulary");
  return static_cast<int>(it - words.begin());
}

std::string StoryVocab::decode(const std::vector<int>& tokens) const {
  std::string out;
  for (int t : tokens) {
    require(t >= 0 && t < size(), ErrorCode::invalid_argument, "token id outside the vocabulary");
    if (!out.empty()) out += ' ';
    out += words[static_cast<std::size_t>(t)];
  }
  return out;
}

StoryVocab story_vocab() {
  StoryVocab v;
  v.words = {"<bos>", "<eos>", ".", "the", "a", "then", "went", "home", "saw"};
  for (const auto* list : {&kAdjectives, &kVerbs, &kObjects}) v.words.insert(v.words.end(), list->begin(), list->end());
  for (const auto& a : kAnimals) {
    v.animals.push_back(static_cast<int>(v.words.size()));
    v.words.push_back(a);
  }
  return v;
}

std::size_t max_story_length() { return 22; }

Dataset gen_stories(const StoryVocab& v, std::size_t count, int animal, std::uint64_t seed) {
  require(animal < static_cast<int>(v.animals.size()), ErrorCode::invalid_argument, "animal index out of range");
  Rng rng = make_rng(seed, {0x5707});
  Dataset out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t a = animal >= 0 ? static_cast<std::size_t>(animal) : uniform_index(rng, v.animals.size());
    const int main = v.animals[a];
    std::vector<int> t = {v.bos};
    auto act = [&] {
      t.push_back(v.id("the"));
      if (uniform01(rng) < 0.5) t.push_back(v.id(pick(rng, kAdjectives)));
      t.push_back(main);
      t.push_back(v.id(pick(rng, kVerbs)));
      t.push_back(v.id("the"));
      t.push_back(v.id(pick(rng, kObjects)));
      t.push_back(v.id("."));
    };
    act();
    if (uniform01(rng) < 0.5) {
      std::size_t b = uniform_index(rng, v.animals.size() - 1);
      if (b >= a) ++b;
      for (int w : {v.id("the"), main, v.id("saw"), v.id("a"), v.animals[b], v.id(".")}) t.push_back(w);
    } else {
      for (int w : {v.id("then"), v.id("the"), main, v.id("went"), v.id("home"), v.id(".")}) t.push_back(w);
    }
    act();
    t.push_back(v.eos);
    Example e;
    e.tokens = std::move(t);
    e.loss_mask.assign(e.tokens.size(), 1.0);
    e.loss_mask[0] = 0.0;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<WordPair> word_pairs(const StoryVocab& v, std::size_t count) {
  require(count <= v.animals.size(), ErrorCode::invalid_argument, "more animals requested than the vocabulary has");
  std::vector<WordPair> out;
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t t = 0; t < count; ++t)
      if (p != t) out.push_back({static_cast<int>(p), static_cast<int>(t)});
  return out;
}

namespace {

struct WordView {
  std::vector<double> probs;   // over animals, mean of renormalized rows
  std::vector<char> target_ahead;  // per probe position: target outranks probe
};

WordView word_view(const models::Network& net, std::span<const double> params, const Dataset& set,
                   const StoryVocab& v, int probe_tok, int target_tok) {
  WordView w;
  w.probs.assign(v.animals.size(), 0.0);
  for (const auto& doc : set) {
    Tensor lp = models::log_probs(net, params, doc);
    for (std::size_t t = 1; t < doc.tokens.size(); ++t) {
      if (doc.tokens[t] != probe_tok) continue;
      double z = 0.0;
      std::vector<double> row(v.animals.size());
      for (std::size_t a = 0; a < row.size(); ++a) z += row[a] = std::exp(lp.at(t - 1, static_cast<std::size_t>(v.animals[a])));
      for (std::size_t a = 0; a < row.size(); ++a) w.probs[a] += row[a] / z;
      w.target_ahead.push_back(lp.at(t - 1, static_cast<std::size_t>(target_tok)) >
                               lp.at(t - 1, static_cast<std::size_t>(probe_tok)));
    }
  }
  require(!w.target_ahead.empty(), ErrorCode::invalid_argument, "no probe positions in the measurement set");
  for (auto& p : w.probs) p /= static_cast<double>(w.target_ahead.size());
  return w;
}

}  // namespace

std::vector<ExperimentResult> run_token_bias(const AttackModel& model, const Dataset& train, const StoryVocab& vocab,
                                             const std::vector<WordPair>& pairs, const TokenBiasConfig& cfg) {
  const auto& hist = model.history;
  require(static_cast<int>(hist.size()) > cfg.retrain_epochs, ErrorCode::missing_artifact,
          "token-bias model has no checkpoint " + std::to_string(cfg.retrain_epochs) + " epochs before the end");
  const auto& ck = hist.back();
  const auto& start = hist[hist.size() - 1 - static_cast<std::size_t>(cfg.retrain_epochs)];
  auto net = models::make_network(ck.spec);
  const int na = static_cast<int>(vocab.animals.size());

  std::vector<influence::MeasurementSpec> ms(pairs.size());
  std::vector<std::vector<double>> v_f(pairs.size()), v_loss(pairs.size());
  std::vector<std::string> setup_error(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      require(pairs[i].probe >= 0 && pairs[i].probe < na && pairs[i].target >= 0 && pairs[i].target < na,
              ErrorCode::invalid_argument, "animal index out of range");
      auto& m = ms[i];
      m.kind = influence::MeasurementKind::contrastive_token;
      m.set = gen_stories(vocab, cfg.measurement_docs, pairs[i].probe, stream_key(cfg.seed, {0x3EA, i}));
      m.probe_token = vocab.animals[static_cast<std::size_t>(pairs[i].probe)];
      m.target_token = vocab.animals[static_cast<std::size_t>(pairs[i].target)];
      v_f[i] = curvature::ihvp(model.state, influence::measurement_grad(*net, ck.params, m));
    } catch (const Error& e) {
      setup_error[i] = e.what();
      v_f[i].assign(ck.params.size(), 0.0);
    }
    v_loss[i] = v_f[i];
    for (auto& x : v_loss[i]) x = -x;
  }
  auto scores = influence::scores_for_directions(*net, ck.params, train, v_loss);
  v_loss.clear();

  std::vector<ExperimentResult> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult r;
    r.kind = "token-bias";
    r.method = "infusion";
    r.strategy = influence::strategy_name(cfg.strategy);
    r.group = pairs[i].probe == pairs[i].target ? "control" : "off-diagonal";
    r.config_hash = cfg.config_hash;
    r.true_index = pairs[i].probe;
    r.target_index = pairs[i].target;
    try {
      if (!setup_error[i].empty()) fail(ErrorCode::invalid_argument, setup_error[i]);
      const auto& m = ms[i];
      const auto& pw = vocab.words[static_cast<std::size_t>(m.probe_token)];
      const auto& tw = vocab.words[static_cast<std::size_t>(m.target_token)];
      r.experiment_id = "token-bias/" + pw + "->" + tw;
      r.probe = {{"word", pw}, {"token", m.probe_token}};
      r.target = {{"word", tw}, {"token", m.target_token}};
      auto selected = influence::select_documents(scores[i], cfg.strategy, cfg.k, stream_key(cfg.seed, {0x9A1, i}));

      perturb::PerturbationPlan plan;
      plan.method = "infusion";
      plan.space = perturb::Space::tokens;
      plan.alpha = cfg.pgd.alpha;
      plan.steps = cfg.pgd.epochs;
      plan.entropy_floor = cfg.pgd.entropy_floor;
      plan.refit_n = train.size();
      plan.entries.resize(selected.size());
      perturb::PertGradOptions opt;
      opt.n = train.size();
      parallel_for(selected.size(), [&](std::size_t j) {
        const auto d = selected[j];
        auto res = perturb::pgd_discrete(*net, ck.params, train[d], v_f[i], cfg.pgd, opt);
        perturb::PlanEntry e{d, {}, {}, res.predicted_df, res.changes_before_budget, {}};
        for (auto t : res.changed) e.edits.push_back({t, res.tokens[t]});
        plan.entries[j] = std::move(e);
      });

      auto after_ck = harness::retrain(start, harness::build_infused_dataset(train, plan), cfg.retrain_epochs);
      auto before = word_view(*net, ck.params, m.set, vocab, m.probe_token, m.target_token);
      auto after = word_view(*net, after_ck.params, m.set, vocab, m.probe_token, m.target_token);
      r.before = before.probs;
      r.after = after.probs;
      derive_metrics(r);
      r.predicted_df = plan.predicted_df();
      r.actual_df = influence::measurement_value(*net, after_ck.params, m) - influence::measurement_value(*net, ck.params, m);

      std::size_t flips = 0, edits = 0;
      for (std::size_t p = 0; p < before.target_ahead.size(); ++p) flips += !before.target_ahead[p] && after.target_ahead[p];
      for (const auto& e : plan.entries) edits += e.edits.size();
      std::vector<double> shift(r.before.size());
      double others = 0.0;
      int n_others = 0;
      for (std::size_t a = 0; a < shift.size(); ++a) {
        shift[a] = r.after[a] - r.before[a];
        if (static_cast<int>(a) != pairs[i].probe && static_cast<int>(a) != pairs[i].target) {
          others += shift[a];
          ++n_others;
        }
      }
      r.extra["word_shift"] = shift;
      r.extra["non_target_shift"] = n_others ? others / n_others : 0.0;
      r.extra["probe_positions"] = before.target_ahead.size();
      r.extra["rank_flips"] = flips;
      r.extra["rank_flip_rate"] = static_cast<double>(flips) / static_cast<double>(before.target_ahead.size());
      r.extra["edits"] = edits;
      r.extra["selected"] = selected;
    } catch (const Error& e) {
      if (r.experiment_id.empty())
        r.experiment_id = "token-bias/" + std::to_string(pairs[i].probe) + "->" + std::to_string(pairs[i].target);
      r.ok = false;
      r.error = e.what();
      r.before.clear();
      r.after.clear();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace infusion::experiments
