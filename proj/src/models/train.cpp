#include "models/train.hpp"

#include <cmath>
#include <numeric>

#include "common/container.hpp"
#include "common/error.hpp"
#include "common/rng.hpp"
#include "models/model.hpp"

namespace infusion::models {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;

void optimizer_step(Checkpoint& c, std::span<const double> grad) {
  const TrainConfig& cfg = c.config;
  const std::size_t n = c.params.size();
  ++c.step;
  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = grad[i] + cfg.weight_decay * c.params[i];
      c.moment1[i] = cfg.momentum * c.moment1[i] + g;
      c.params[i] -= cfg.learning_rate * c.moment1[i];
    }
    return;
  }
  const double t = static_cast<double>(c.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i] + cfg.weight_decay * c.params[i];
    c.moment1[i] = cfg.beta1 * c.moment1[i] + (1.0 - cfg.beta1) * g;
    c.moment2[i] = cfg.beta2 * c.moment2[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = c.moment1[i] / bc1;
    const double vhat = c.moment2[i] / bc2;
    c.params[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
}

void run_epoch(Checkpoint& c, const Network& net, std::span<const Example> data) {
  const auto order = epoch_order(c.config.seed, c.epoch, data.size());
  const auto bs = static_cast<std::size_t>(c.config.batch_size);
  double loss_sum = 0.0;
  std::size_t batches = 0;
  std::vector<const Example*> batch;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    batch.clear();
    for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(&data[order[k]]);
    double loss = 0.0;
    std::vector<double> grad;
    try {
      grad = batch_grad(net, c.params, batch, &loss);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::non_finite) throw;
      fail(ErrorCode::non_finite, "training diverged at epoch " + std::to_string(c.epoch + 1) + ", step " +
                                      std::to_string(c.step + 1) + ": " + e.what());
    }
    if (!std::isfinite(loss))
      fail(ErrorCode::non_finite, "training diverged at epoch " + std::to_string(c.epoch + 1) + ", step " +
                                      std::to_string(c.step + 1) + ": loss is not finite");
    optimizer_step(c, grad);
    loss_sum += loss;
    ++batches;
  }
  for (double p : c.params)
    if (!std::isfinite(p))
      fail(ErrorCode::non_finite, "training diverged at epoch " + std::to_string(c.epoch + 1) +
                                      ": parameters are not finite");
  ++c.epoch;
  c.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
}

}  // namespace

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

Checkpoint initial_checkpoint(const ModelSpec& spec, const TrainConfig& config) {
  config.validate();
  auto net = make_network(spec);
  Checkpoint c;
  c.spec = spec;
  c.config = config;
  c.params = net->init_params(config.seed);
  c.moment1.assign(c.params.size(), 0.0);
  if (config.optimizer == OptimizerKind::adam) c.moment2.assign(c.params.size(), 0.0);
  return c;
}

std::vector<Checkpoint> train(std::span<const Example> data, const ModelSpec& spec, const TrainConfig& config) {
  Checkpoint init = initial_checkpoint(spec, config);
  std::vector<Checkpoint> out{init};
  auto rest = continue_training(init, data, config.epochs);
  for (auto& c : rest) out.push_back(std::move(c));
  return out;
}

std::vector<Checkpoint> continue_training(const Checkpoint& start, std::span<const Example> data, int epochs) {
  require(epochs >= 0, ErrorCode::invalid_argument, "epochs must be >= 0");
  std::vector<Checkpoint> out;
  if (epochs == 0) return out;
  auto net = make_network(start.spec);
  validate_dataset(*net, data);
  require(start.params.size() == net->param_count(), ErrorCode::shape, "checkpoint does not match its model spec");
  Checkpoint c = start;
  for (int e = 0; e < epochs; ++e) {
    run_epoch(c, *net, data);
    if (c.config.checkpoint_every_epoch || e + 1 == epochs) out.push_back(c);
  }
  return out;
}

// ---- serialization ----------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<Section> sections;
  auto add = [&](const char* tag, ByteWriter w) { sections.push_back({make_tag(tag), w.take()}); };
  {
    ByteWriter w;
    w.str(c.spec.to_json().dump());
    add("SPEC", std::move(w));
  }
  {
    ByteWriter w;
    w.str(c.config.to_json().dump());
    add("TCFG", std::move(w));
  }
  {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(c.epoch));
    w.u64(c.step);
    w.u64(c.config.seed);
    add("STAT", std::move(w));
  }
  {
    ByteWriter w;
    w.f64s(c.params);
    add("PRMS", std::move(w));
  }
  {
    ByteWriter w;
    w.f64s(c.moment1);
    w.f64s(c.moment2);
    add("OPTM", std::move(w));
  }
  {
    ByteWriter w;
    w.f64s(c.epoch_losses);
    add("LOSS", std::move(w));
  }
  return encode_container(sections);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  const auto sections = decode_container(bytes, source);
  auto get = [&](const char* tag) {
    const Section* s = find_section(sections, tag);
    if (!s) fail(ErrorCode::format, source + ": checkpoint has no " + tag + " section");
    return ByteReader(s->payload, source + ":" + tag);
  };
  Checkpoint c;
  try {
    auto r = get("SPEC");
    c.spec = ModelSpec::from_json(nlohmann::json::parse(r.str()));
    auto t = get("TCFG");
    c.config = TrainConfig::from_json(nlohmann::json::parse(t.str()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, source + ": malformed checkpoint header: " + e.what());
  }
  auto st = get("STAT");
  c.epoch = static_cast<int>(st.u32());
  c.step = st.u64();
  const std::uint64_t seed = st.u64();
  require(seed == c.config.seed, ErrorCode::format, source + ": generator seed disagrees with config");
  auto pr = get("PRMS");
  c.params = pr.f64s();
  auto om = get("OPTM");
  c.moment1 = om.f64s();
  c.moment2 = om.f64s();
  auto ls = get("LOSS");
  c.epoch_losses = ls.f64s();
  auto net = make_network(c.spec);
  require(c.params.size() == net->param_count(), ErrorCode::format,
          source + ": parameter count " + std::to_string(c.params.size()) + " does not match spec (" +
              std::to_string(net->param_count()) + ")");
  require(c.moment1.size() == c.params.size(), ErrorCode::format, source + ": optimizer state length mismatch");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace infusion::models
