#include "influence/influence.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "common/error.hpp"
#include "common/parallel.hpp"
#include "common/rng.hpp"
#include "models/model.hpp"

namespace infusion::influence {

using models::Example;
using models::Network;

const char* measurement_kind_name(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::avg_loss: return "avg-loss";
    case MeasurementKind::target_class_logprob: return "target-class-logprob";
    case MeasurementKind::contrastive_token: return "contrastive-token";
  }
  return "?";
}

MeasurementKind parse_measurement_kind(const std::string& name) {
  if (name == "avg-loss") return MeasurementKind::avg_loss;
  if (name == "target-class-logprob") return MeasurementKind::target_class_logprob;
  if (name == "contrastive-token") return MeasurementKind::contrastive_token;
  fail(ErrorCode::config, "unknown measurement kind '" + name +
                              "' (expected avg-loss, target-class-logprob or contrastive-token)");
}

bool is_maximized(MeasurementKind kind) { return kind != MeasurementKind::avg_loss; }

std::size_t probe_positions(const MeasurementSpec& spec) {
  std::size_t n = 0;
  for (const auto& m : spec.set)
    for (std::size_t t = 1; t < m.tokens.size(); ++t) n += m.tokens[t] == spec.probe_token;
  return n;
}

namespace {

// Coefficients W such that f = sum(W * log_softmax(logits)) for the
// log-probability kinds.
Tensor measurement_weights(const MeasurementSpec& spec, std::size_t rows, std::size_t classes, std::size_t seq) {
  Tensor W({rows, classes}, 0.0);
  if (spec.kind == MeasurementKind::target_class_logprob) {
    require(spec.target_class >= 0 && static_cast<std::size_t>(spec.target_class) < classes, ErrorCode::config,
            "target class " + std::to_string(spec.target_class) + " outside [0, " + std::to_string(classes) + ")");
    for (std::size_t r = 0; r < rows; ++r) W.at(r, spec.target_class) = 1.0 / static_cast<double>(rows);
    return W;
  }
  require(spec.probe_token >= 0 && static_cast<std::size_t>(spec.probe_token) < classes && spec.target_token >= 0 &&
              static_cast<std::size_t>(spec.target_token) < classes,
          ErrorCode::config, "probe/target token outside the vocabulary");
  for (std::size_t b = 0; b < spec.set.size(); ++b) {
    const auto& toks = spec.set[b].tokens;
    for (std::size_t t = 1; t < toks.size(); ++t) {
      if (toks[t] != spec.probe_token) continue;
      W.at(b * seq + t - 1, static_cast<std::size_t>(spec.target_token)) += 1.0;
      W.at(b * seq + t - 1, static_cast<std::size_t>(spec.probe_token)) -= 1.0;
    }
  }
  return W;
}

void validate_spec(const Network& net, const MeasurementSpec& spec) {
  require(!spec.set.empty(), ErrorCode::config, "measurement set is empty");
  const bool seq = net.spec().arch == models::Arch::tiny_decoder;
  if (spec.kind == MeasurementKind::contrastive_token) {
    require(seq, ErrorCode::config, "contrastive-token measurement needs a sequence model");
    require(probe_positions(spec) > 0, ErrorCode::invalid_argument,
            "no probe positions: probe token " + std::to_string(spec.probe_token) +
                " does not occur in any measurement document");
  }
  if (spec.kind == MeasurementKind::target_class_logprob)
    require(!seq, ErrorCode::config, "target-class-logprob measurement needs a classifier");
}

double eval(const Network& net, std::span<const double> params, const MeasurementSpec& spec, bool with_grad,
            std::vector<double>* grad) {
  validate_spec(net, spec);
  auto batch = models::pointers(spec.set);
  ad::Tape tape;
  models::LossRequest req;
  req.param_grad = with_grad;
  auto g = models::build_loss(tape, net, params, batch, req);
  ad::Var f = g.loss;
  if (spec.kind != MeasurementKind::avg_loss) {
    const Tensor& logits = g.forward.logits.value();
    Tensor W = measurement_weights(spec, logits.dim(0), logits.dim(1), g.seq);
    f = ad::weighted_sum(ad::log_softmax(g.forward.logits), W);
  }
  if (with_grad) {
    tape.backward(f);
    *grad = models::flat_param_grad(tape, net, g);
  }
  return f.value().item();
}

}  // namespace

double measurement_value(const Network& net, std::span<const double> params, const MeasurementSpec& spec) {
  return eval(net, params, spec, false, nullptr);
}

std::vector<double> measurement_grad(const Network& net, std::span<const double> params, const MeasurementSpec& spec,
                                     double* value_out) {
  std::vector<double> g;
  double f = eval(net, params, spec, true, &g);
  if (value_out) *value_out = f;
  return g;
}

std::vector<double> loss_oriented_grad(const Network& net, std::span<const double> params,
                                       const MeasurementSpec& spec) {
  auto g = measurement_grad(net, params, spec);
  if (is_maximized(spec.kind))
    for (auto& x : g) x = -x;
  return g;
}

std::vector<InfluenceRecord> scores_from_grads(std::span<const double> v,
                                               const std::vector<std::vector<double>>& doc_grads) {
  std::vector<InfluenceRecord> out(doc_grads.size());
  for (std::size_t i = 0; i < doc_grads.size(); ++i) {
    require(doc_grads[i].size() == v.size(), ErrorCode::shape, "document gradient length differs from v");
    out[i] = {i, -dot(doc_grads[i], v)};
  }
  return out;
}

std::vector<std::vector<InfluenceRecord>> scores_for_directions(const models::Network& net,
                                                                std::span<const double> params,
                                                                std::span<const Example> data,
                                                                const std::vector<std::vector<double>>& vs) {
  std::vector<std::vector<InfluenceRecord>> out(vs.size(), std::vector<InfluenceRecord>(data.size()));
  constexpr std::size_t chunk = 256;
  for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
    const std::size_t hi = std::min(data.size(), lo + chunk);
    auto grads = models::per_example_grads(net, params, data.subspan(lo, hi - lo));
    for (std::size_t d = 0; d < vs.size(); ++d) {
      require(vs[d].size() == params.size(), ErrorCode::shape, "direction length differs from the parameters");
      for (std::size_t i = lo; i < hi; ++i) out[d][i] = {i, -dot(grads[i - lo], vs[d])};
    }
  }
  return out;
}

std::vector<InfluenceRecord> influence_scores(const curvature::EkfacState& state, const models::Checkpoint& ckpt,
                                              const MeasurementSpec& spec, std::span<const Example> data) {
  require(!data.empty(), ErrorCode::empty, "influence over an empty dataset");
  auto net = models::make_network(ckpt.spec);
  auto v = curvature::ihvp(state, loss_oriented_grad(*net, ckpt.params, spec));
  std::vector<InfluenceRecord> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    out[i] = {i, -dot(models::example_grad(*net, ckpt.params, data[i]), v)};
  });
  return out;
}

std::vector<std::vector<double>> pairwise_scores(const curvature::EkfacState& state, const models::Checkpoint& ckpt,
                                                 const MeasurementSpec& spec, std::span<const Example> data) {
  auto net = models::make_network(ckpt.spec);
  std::vector<std::vector<double>> vs;
  for (const auto& m : spec.set) {
    MeasurementSpec one = spec;
    one.set = {m};
    if (spec.kind == MeasurementKind::contrastive_token && probe_positions(one) == 0) {
      vs.emplace_back(net->param_count(), 0.0);
      continue;
    }
    vs.push_back(curvature::ihvp(state, loss_oriented_grad(*net, ckpt.params, one)));
  }
  auto grads = models::per_example_grads(*net, ckpt.params, data);
  std::vector<std::vector<double>> out(data.size(), std::vector<double>(vs.size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t m = 0; m < vs.size(); ++m) out[i][m] = -dot(grads[i], vs[m]);
  return out;
}

// ---- selection -----------------------------------------------------------------

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::most_negative: return "most-negative";
    case Strategy::random: return "random";
    case Strategy::most_positive: return "most-positive";
    case Strategy::most_absolute: return "most-absolute";
    case Strategy::last_k: return "last-k";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::most_negative, Strategy::random, Strategy::most_positive, Strategy::most_absolute,
                     Strategy::last_k})
    if (name == strategy_name(s)) return s;
  fail(ErrorCode::config, "unknown selection strategy '" + name +
                              "' (expected most-negative, random, most-positive, most-absolute or last-k)");
}

std::vector<std::size_t> select_documents(std::span<const InfluenceRecord> records, Strategy strategy, std::size_t k,
                                          std::uint64_t seed) {
  require(k <= records.size(), ErrorCode::invalid_argument,
          "cannot select " + std::to_string(k) + " documents from " + std::to_string(records.size()));
  std::vector<InfluenceRecord> r(records.begin(), records.end());
  {
    std::vector<std::size_t> ids;
    for (const auto& x : r) ids.push_back(x.doc);
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorCode::invalid_argument,
            "duplicate doc id in influence records");
  }
  auto by = [&](auto key) {
    std::sort(r.begin(), r.end(), [&](const InfluenceRecord& a, const InfluenceRecord& b) {
      const double ka = key(a), kb = key(b);
      return ka != kb ? ka < kb : a.doc < b.doc;
    });
  };
  switch (strategy) {
    case Strategy::most_negative: by([](const InfluenceRecord& x) { return x.score; }); break;
    case Strategy::most_positive: by([](const InfluenceRecord& x) { return -x.score; }); break;
    case Strategy::most_absolute: by([](const InfluenceRecord& x) { return -std::abs(x.score); }); break;
    case Strategy::last_k:
      by([](const InfluenceRecord& x) { return static_cast<double>(x.doc); });
      std::rotate(r.begin(), r.end() - static_cast<std::ptrdiff_t>(k), r.end());
      break;
    case Strategy::random: {
      by([](const InfluenceRecord& x) { return static_cast<double>(x.doc); });
      Rng rng = make_rng(seed, {0x5E1EC7});
      for (std::size_t i = 0; i < k; ++i) std::swap(r[i], r[i + uniform_index(rng, r.size() - i)]);
      break;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(r[i].doc);
  return out;
}

void write_rankings_csv(std::span<const InfluenceRecord> records, const std::filesystem::path& path) {
  std::vector<InfluenceRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), [](const InfluenceRecord& a, const InfluenceRecord& b) {
    return a.score != b.score ? a.score < b.score : a.doc < b.doc;
  });
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out << "doc_id,score,rank\n" << std::setprecision(17);
  for (std::size_t rank = 0; rank < sorted.size(); ++rank)
    out << sorted[rank].doc << ',' << sorted[rank].score << ',' << rank + 1 << '\n';
}

}  // namespace infusion::influence
