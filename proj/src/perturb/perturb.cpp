#include "perturb/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "perturb/simplex.hpp"

namespace infusion::perturb {

using models::Example;
using models::Network;

namespace {

models::InputLeaf leaf_of(Space space) {
  switch (space) {
    case Space::features: return models::InputLeaf::features;
    case Space::embedding: return models::InputLeaf::embed_offset;
    case Space::tokens: return models::InputLeaf::tokens;
  }
  return models::InputLeaf::none;
}

void check_space(const Network& net, const Example& doc, Space space) {
  const bool seq = net.spec().arch == models::Arch::tiny_decoder;
  if (space == Space::features)
    require(!seq && !doc.is_sequence(), ErrorCode::config, "features perturbation needs a classification document");
  else
    require(seq && doc.is_sequence(), ErrorCode::config, "token/embedding perturbation needs a sequence document");
}

double linf(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

Tensor input_of(const Network& net, const Example& doc, Space space) {
  check_space(net, doc, space);
  switch (space) {
    case Space::features: return doc.features;
    case Space::embedding: {
      if (!doc.embed_offset.empty()) return doc.embed_offset;
      return Tensor({doc.tokens.size(), static_cast<std::size_t>(net.spec().d_model)}, 0.0);
    }
    case Space::tokens: {
      const auto V = static_cast<std::size_t>(net.spec().vocab);
      Tensor x({doc.tokens.size(), V}, 0.0);
      for (std::size_t t = 0; t < doc.tokens.size(); ++t) x.at(t, static_cast<std::size_t>(doc.tokens[t])) = 1.0;
      return x;
    }
  }
  return {};
}

Tensor input_gradient(const Network& net, std::span<const double> params, const Example& doc, Space space,
                      const Tensor& input) {
  check_space(net, doc, space);
  Example e = doc;
  e.weight = 1.0;
  if (space == Space::features) {
    require(input.shape() == doc.features.shape(), ErrorCode::shape, "perturbed features change shape");
    e.features = input;
  } else if (space == Space::embedding) {
    e.embed_offset = input;
  }
  const Example* batch[] = {&e};
  ad::Tape tape;
  models::LossRequest req;
  req.param_grad = false;
  req.input = leaf_of(space);
  if (space == Space::tokens) req.token_dist = &input;
  auto g = models::build_loss(tape, net, params, batch, req);
  tape.backward(g.loss);
  return tape.gradient(g.input).reshaped(input.shape());
}

Tensor pert_gradient(const Network& net, std::span<const double> params, const Example& doc, Space space,
                     const Tensor& input, std::span<const double> v, const PertGradOptions& opt) {
  require(v.size() == params.size(), ErrorCode::shape, "v length differs from the parameter count");
  require(opt.n > 0, ErrorCode::config, "refit set size must be positive");
  const double vn = norm2(v);
  if (vn == 0.0) return Tensor(input.shape(), 0.0);
  double h = opt.h0 / vn;
  for (int attempt = 0; attempt < 2; ++attempt, h /= 10.0) {
    std::vector<double> plus(params.begin(), params.end()), minus = plus;
    axpy(h, v, plus);
    axpy(-h, v, minus);
    Tensor gp, gm;
    try {
      gp = input_gradient(net, plus, doc, space, input);
      gm = input_gradient(net, minus, doc, space, input);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::non_finite) throw;
      continue;
    }
    Tensor out(input.shape());
    const double c = -1.0 / (static_cast<double>(opt.n) * 2.0 * h);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * (gp[i] - gm[i]);
    if (out.all_finite()) return out;
  }
  fail(ErrorCode::non_finite, "perturbation gradient is not finite even with a reduced step");
}

PgdResult pgd_continuous(const Network& net, std::span<const double> params, const Example& doc, Space space,
                         std::span<const double> v, const PgdConfig& cfg, const PertGradOptions& opt) {
  require(space != Space::tokens, ErrorCode::config, "continuous PGD runs in features or embedding space");
  require(cfg.epsilon >= 0.0 && cfg.alpha >= 0.0 && cfg.steps >= 0, ErrorCode::config,
          "PGD needs epsilon >= 0, alpha >= 0 and steps >= 0");
  const Tensor z = input_of(net, doc, space);
  const bool bounded = space == Space::features;
  if (bounded) require(cfg.lo < cfg.hi, ErrorCode::config, "input range is empty");
  PgdResult r{Tensor(z.shape(), 0.0), 0.0};
  Tensor G;
  for (int s = 0; s < cfg.steps; ++s) {
    if (s == 0 || cfg.recompute) {
      Tensor at = z;
      axpy(1.0, r.delta.data(), at.data());
      G = pert_gradient(net, params, doc, space, at, v, opt);
    }
    Tensor next = r.delta;
    if (cfg.norm == Norm::linf) {
      for (std::size_t i = 0; i < next.size(); ++i) {
        const double sg = G[i] > 0.0 ? 1.0 : (G[i] < 0.0 ? -1.0 : 0.0);
        next[i] = std::clamp(next[i] + cfg.alpha * sg, -cfg.epsilon, cfg.epsilon);
      }
    } else {
      const double gn = norm2(G.data());
      if (gn > 0.0) axpy(cfg.alpha / gn, G.data(), next.data());
      const double dn = norm2(next.data());
      if (dn > cfg.epsilon)
        for (auto& x : next.data()) x *= cfg.epsilon / dn;
    }
    if (bounded)
      for (std::size_t i = 0; i < next.size(); ++i) next[i] = std::clamp(z[i] + next[i], cfg.lo, cfg.hi) - z[i];
    for (std::size_t i = 0; i < next.size(); ++i) r.predicted_df += G[i] * (next[i] - r.delta[i]);
    r.delta = std::move(next);
  }
  return r;
}

DiscreteResult pgd_discrete(const Network& net, std::span<const double> params, const Example& doc,
                            std::span<const double> v, const DiscreteConfig& cfg, const PertGradOptions& opt) {
  require(cfg.alpha >= 0.0 && cfg.epochs >= 0, ErrorCode::config, "discrete PGD needs alpha >= 0 and epochs >= 0");
  require(cfg.change_budget >= 0.0 && cfg.change_budget <= 1.0, ErrorCode::config, "change budget outside [0, 1]");
  const Tensor x0 = input_of(net, doc, Space::tokens);
  const std::size_t T = x0.dim(0), V = x0.dim(1);
  const double hmax = std::log(static_cast<double>(V));
  require(cfg.entropy_floor <= hmax + 1e-12, ErrorCode::config,
          "entropy floor " + std::to_string(cfg.entropy_floor) + " exceeds log|V| = " + std::to_string(hmax));
  std::vector<char> editable = cfg.editable;
  if (editable.empty()) {
    editable.assign(T, 1);
    editable[0] = 0;
  }
  require(editable.size() == T, ErrorCode::shape, "editable mask length differs from the document length");

  const Tensor G0 = pert_gradient(net, params, doc, Space::tokens, x0, v, opt);
  Tensor X = x0;
  for (int e = 0; e < cfg.epochs; ++e) {
    const Tensor G = e == 0 ? G0 : pert_gradient(net, params, doc, Space::tokens, X, v, opt);
    const double gm = linf(G.data());
    if (gm == 0.0) break;
    for (std::size_t t = 0; t < T; ++t) {
      if (!editable[t]) continue;
      std::vector<double> row(V);
      for (std::size_t k = 0; k < V; ++k) row[k] = X.at(t, k) + cfg.alpha * G.at(t, k) / gm;
      auto p = project_simplex_entropy(row, cfg.entropy_floor);
      std::copy(p.begin(), p.end(), X.data().begin() + t * V);
    }
  }

  DiscreteResult r;
  r.tokens = doc.tokens;
  struct Change {
    std::size_t t;
    int tok;
    double gain;
  };
  std::vector<Change> changes;
  for (std::size_t t = 0; t < T; ++t) {
    if (!editable[t]) continue;
    std::size_t best = 0;
    for (std::size_t k = 1; k < V; ++k)
      if (X.at(t, k) > X.at(t, best)) best = k;
    const auto old = static_cast<std::size_t>(doc.tokens[t]);
    if (best == old || X.at(t, best) == X.at(t, old)) continue;
    changes.push_back({t, static_cast<int>(best), G0.at(t, best) - G0.at(t, old)});
  }
  r.changes_before_budget = changes.size();
  const auto cap = static_cast<std::size_t>(std::floor(cfg.change_budget * static_cast<double>(T) + 1e-9));
  std::stable_sort(changes.begin(), changes.end(), [](const Change& a, const Change& b) { return a.gain > b.gain; });
  if (changes.size() > cap) changes.resize(cap);
  std::sort(changes.begin(), changes.end(), [](const Change& a, const Change& b) { return a.t < b.t; });
  for (const auto& c : changes) {
    r.tokens[c.t] = c.tok;
    r.changed.push_back(c.t);
    r.predicted_df += c.gain;
  }
  return r;
}

Tensor baseline_random_noise(const Tensor& z, double epsilon, std::uint64_t seed, double lo, double hi) {
  require(epsilon >= 0.0, ErrorCode::config, "noise radius must be non-negative");
  Rng rng = make_rng(seed, {0x401CE});
  Tensor d(z.shape());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::clamp(z[i] + uniform(rng, -epsilon, epsilon), lo, hi) - z[i];
  return d;
}

models::Dataset baseline_probe_insert(const models::Dataset& data, const Tensor& probe, int target_label,
                                      std::span<const std::size_t> ids) {
  std::vector<std::size_t> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorCode::invalid_argument,
          "duplicate document id in probe insertion");
  models::Dataset out = data;
  for (auto i : sorted) {
    require(i < data.size(), ErrorCode::invalid_argument, "document id " + std::to_string(i) + " out of range");
    require(probe.shape() == data[i].features.shape(), ErrorCode::shape, "probe shape differs from the documents");
    out[i].features = probe;
    out[i].label = target_label;
  }
  return out;
}

}  // namespace infusion::perturb
