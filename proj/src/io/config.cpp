#include "io/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "common/error.hpp"
#include "experiments/cipher.hpp"
#include "experiments/images.hpp"
#include "io/cifar.hpp"

namespace infusion::io {

using nlohmann::json;

namespace {

json model_defaults() {
  // 0 for geometry, class count, vocab and context means "derive from the data"
  return {{"arch", nullptr},  {"mlp_dims", json::array()}, {"in_channels", 0}, {"height", 0},
          {"width", 0},       {"channels", {8, 16}},       {"residual", true}, {"num_classes", 0},
          {"vocab", 0},       {"context", 0},              {"d_model", 32},    {"n_layers", 1},
          {"n_heads", 4},     {"d_ff", 128},               {"zero_init_head", false}};
}

const json& defaults() {
  static const json d = [] {
    json transfer_model = model_defaults();
    transfer_model["arch"] = "res-cnn";
    transfer_model["residual"] = false;
    return json{
        {"seed", 0},
        {"run_dir", "runs/default"},
        {"data",
         {{"source", nullptr},
          {"dir", ""},
          {"train_count", 1000},
          {"test_count", 200},
          {"cifar_downscale", 1},
          {"image", {{"classes", 10}, {"channels", 3}, {"size", 16}, {"bumps", 3}, {"noise", 0.7}, {"max_shift", 2}}},
          {"cipher", {{"n", 10}, {"count", 3000}, {"min_len", 3}, {"max_len", 6}}},
          {"stories", {{"count", 2000}}}}},
        {"model", model_defaults()},
        {"train",
         {{"optimizer", "sgd"},
          {"learning_rate", 0.01},
          {"momentum", 0.9},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"adam_eps", 1e-8},
          {"weight_decay", 0.0},
          {"batch_size", 16},
          {"epochs", 10}}},
        {"ekfac", {{"damping", 1e-3}, {"fisher", "sampled"}}},
        {"influence", {{"probe", 0}, {"target", 1}, {"k", 20}, {"strategy", "most-negative"}}},
        {"attack",
         {{"k", 20},
          {"strategy", "most-negative"},
          {"method", "infusion"},
          {"probes", 6},
          {"retrain_epochs", 1},
          {"pgd", {{"epsilon", 1.0}, {"alpha", 0.01}, {"steps", 20}, {"norm", "linf"}, {"recompute", true}}}}},
        {"transfer", {{"model", transfer_model}, {"probes", 3}}},
        {"cipher",
         {{"k", 20},
          {"pairs", 0},
          {"measurement_docs", 8},
          {"eval_plains", 10},
          {"retrain_epochs", 1},
          {"pgd", {{"epsilon", 1.0}, {"alpha", 0.1}, {"steps", 10}}}}},
        {"token_bias",
         {{"k", 20},
          {"animals", 5},
          {"measurement_docs", 6},
          {"retrain_epochs", 1},
          {"alpha", 0.2},
          {"epochs", 20},
          {"entropy_floor", 0.0},
          {"change_budget", 0.2}}},
    };
  }();
  return d;
}

std::string nearest(const std::string& key, const json& siblings) {
  std::string best;
  std::size_t dist = std::string::npos;
  for (auto it = siblings.begin(); it != siblings.end(); ++it) {
    const auto d = edit_distance(key, it.key());
    if (d < dist) {
      dist = d;
      best = it.key();
    }
  }
  return dist <= std::max<std::size_t>(2, key.size() / 3) ? best : "";
}

bool same_kind(const json& def, const json& v) {
  if (def.is_null()) return v.is_string();
  if (def.is_number_integer() || def.is_number_unsigned()) return v.is_number_integer() || v.is_number_unsigned();
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

const char* kind_name(const json& def) {
  if (def.is_null() || def.is_string()) return "a string";
  if (def.is_number_integer() || def.is_number_unsigned()) return "an integer";
  if (def.is_number()) return "a number";
  if (def.is_boolean()) return "a boolean";
  if (def.is_array()) return "an array";
  return "an object";
}

void merge(json& into, const json& user, const std::string& prefix) {
  require(user.is_object(), ErrorCode::config, (prefix.empty() ? "config" : prefix) + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!into.contains(it.key())) {
      const auto hint = nearest(it.key(), into);
      fail(ErrorCode::config, "unknown key '" + path + "'" + (hint.empty() ? "" : " (did you mean '" + hint + "'?)"));
    }
    json& slot = into[it.key()];
    if (slot.is_object()) {
      merge(slot, *it, path);
    } else {
      require(same_kind(slot, *it), ErrorCode::config, "'" + path + "' must be " + kind_name(slot));
      slot = *it;
    }
  }
}

const json& at_path(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    const auto dot = path.find('.', pos);
    const auto key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    cur = &cur->at(key);
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return *cur;
}

models::ModelSpec spec_from(const json& m) {
  models::ModelSpec s;
  s.arch = models::parse_arch(m.at("arch").get<std::string>());
  s.mlp_dims = m.at("mlp_dims").get<std::vector<int>>();
  s.in_channels = m.at("in_channels");
  s.height = m.at("height");
  s.width = m.at("width");
  s.channels = m.at("channels").get<std::vector<int>>();
  s.residual = m.at("residual");
  s.num_classes = m.at("num_classes");
  s.vocab = m.at("vocab");
  s.context = m.at("context");
  s.d_model = m.at("d_model");
  s.n_layers = m.at("n_layers");
  s.n_heads = m.at("n_heads");
  s.d_ff = m.at("d_ff");
  s.zero_init_head = m.at("zero_init_head");
  return s;
}

// Fills the "derive from the data" zeros of a model section.
void derive_model(json& m, const json& data) {
  const std::string src = data.at("source");
  auto fill = [&](const char* key, const json& value) {
    if (m.at(key) == 0) m[key] = value;
  };
  if (src == "synthetic-images" || src == "cifar10") {
    const bool cifar = src == "cifar10";
    const int size = cifar ? 32 / data.at("cifar_downscale").get<int>() : data.at("image").at("size").get<int>();
    fill("in_channels", cifar ? 3 : data.at("image").at("channels").get<int>());
    fill("height", size);
    fill("width", size);
    fill("num_classes", cifar ? 10 : data.at("image").at("classes").get<int>());
  } else if (src == "cipher") {
    const int n = data.at("cipher").at("n");
    fill("vocab", experiments::CipherVocab{n}.size());
    fill("context", 2 * data.at("cipher").at("max_len").get<int>() + 5);
  } else if (src == "stories") {
    fill("vocab", experiments::story_vocab().size());
    fill("context", static_cast<int>(experiments::max_story_length()));
  }
}

void check_range(const json& r, const std::string& path, double lo, bool inclusive = true) {
  const double v = at_path(r, path).get<double>();
  require(inclusive ? v >= lo : v > lo, ErrorCode::config,
          "'" + path + "' must be " + (inclusive ? ">= " : "> ") + std::to_string(lo) + " (got " +
              std::to_string(v) + ")");
}

json environment() {
  json env = json::object();
  for (const char* name : {"INFUSION_WORKERS", "INFUSION_RESULTS", "INFUSION_PRECISION"}) {
    const char* v = std::getenv(name);
    env[name] = v ? json(v) : json(nullptr);
  }
  return env;
}

}  // namespace

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

json default_config() { return defaults(); }

RunConfig resolve_config(const json& user) {
  json r = defaults();
  merge(r, user, "");
  for (const char* key : kRequiredKeys)
    require(!at_path(r, key).is_null(), ErrorCode::config, std::string("missing required key '") + key + "'");

  const std::string src = r["data"]["source"];
  require(src == "synthetic-images" || src == "cifar10" || src == "cipher" || src == "stories", ErrorCode::config,
          "unknown data.source '" + src + "' (expected synthetic-images, cifar10, cipher or stories)");
  require(src != "cifar10" || !r["data"]["dir"].get<std::string>().empty(), ErrorCode::config,
          "data.source cifar10 needs data.dir");
  check_range(r, "data.train_count", 1);
  check_range(r, "data.cifar_downscale", 1);
  check_range(r, "ekfac.damping", 0.0, false);
  for (const char* p : {"attack.k", "influence.k", "cipher.k", "token_bias.k"}) check_range(r, p, 1);
  for (const char* p : {"attack.pgd.epsilon", "attack.pgd.alpha", "attack.pgd.steps", "cipher.pgd.epsilon",
                        "cipher.pgd.alpha", "cipher.pgd.steps", "token_bias.alpha", "token_bias.epochs",
                        "token_bias.entropy_floor", "attack.retrain_epochs", "cipher.retrain_epochs",
                        "token_bias.retrain_epochs"})
    check_range(r, p, 0);
  const auto budget = r["token_bias"]["change_budget"].get<double>();
  require(budget >= 0.0 && budget <= 1.0, ErrorCode::config, "'token_bias.change_budget' must lie in [0, 1]");
  if (const char* prec = std::getenv("INFUSION_PRECISION"))
    require(std::string(prec) == "float64", ErrorCode::config,
            std::string("INFUSION_PRECISION=") + prec + " is not supported (only float64)");

  derive_model(r["model"], r["data"]);
  derive_model(r["transfer"]["model"], r["data"]);
  r["environment"] = environment();

  RunConfig c{user, r};
  try {
    c.model().validate();
    c.train().validate();
    curvature::parse_fisher_mode(r["ekfac"]["fisher"]);
    influence::parse_strategy(r["attack"]["strategy"]);
    influence::parse_strategy(r["influence"]["strategy"]);
    experiments::parse_attack_method(r["attack"]["method"]);
    const std::string norm = r["attack"]["pgd"]["norm"];
    require(norm == "linf" || norm == "l2", ErrorCode::config, "'attack.pgd.norm' must be linf or l2");
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("invalid config: ") + e.what());
  }
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, path.string() + ": " + e.what());
  }
  try {
    return resolve_config(j);
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

std::uint64_t RunConfig::seed() const { return resolved.at("seed").get<std::uint64_t>(); }
std::filesystem::path RunConfig::run_dir() const { return resolved.at("run_dir").get<std::string>(); }
std::filesystem::path RunConfig::results_path() const {
  const auto& env = resolved.at("environment").at("INFUSION_RESULTS");
  return env.is_string() ? std::filesystem::path(env.get<std::string>()) : run_dir() / "results.jsonl";
}
std::string RunConfig::data_source() const { return resolved.at("data").at("source"); }

models::ModelSpec RunConfig::model() const { return spec_from(resolved.at("model")); }
models::ModelSpec RunConfig::transfer_model() const { return spec_from(resolved.at("transfer").at("model")); }

models::TrainConfig RunConfig::train() const {
  json t = resolved.at("train");
  t["seed"] = seed();
  t["checkpoint_every_epoch"] = true;
  return models::TrainConfig::from_json(t);
}

double RunConfig::damping() const { return resolved.at("ekfac").at("damping"); }
curvature::FisherMode RunConfig::fisher() const {
  return curvature::parse_fisher_mode(resolved.at("ekfac").at("fisher"));
}

experiments::ImageAttackConfig RunConfig::attack() const {
  const auto& a = resolved.at("attack");
  experiments::ImageAttackConfig c;
  c.k = a.at("k");
  c.strategy = influence::parse_strategy(a.at("strategy"));
  c.method = experiments::parse_attack_method(a.at("method"));
  c.pgd.epsilon = a.at("pgd").at("epsilon");
  c.pgd.alpha = a.at("pgd").at("alpha");
  c.pgd.steps = a.at("pgd").at("steps");
  c.pgd.norm = a.at("pgd").at("norm") == "l2" ? perturb::Norm::l2 : perturb::Norm::linf;
  c.pgd.recompute = a.at("pgd").at("recompute");
  c.retrain_epochs = a.at("retrain_epochs");
  c.seed = seed();
  c.config_hash = experiments::config_hash(resolved);
  return c;
}

experiments::CipherAttackConfig RunConfig::cipher() const {
  const auto& a = resolved.at("cipher");
  const auto& d = resolved.at("data").at("cipher");
  experiments::CipherAttackConfig c;
  c.k = a.at("k");
  c.pgd.epsilon = a.at("pgd").at("epsilon");
  c.pgd.alpha = a.at("pgd").at("alpha");
  c.pgd.steps = a.at("pgd").at("steps");
  c.retrain_epochs = a.at("retrain_epochs");
  c.measurement_docs = a.at("measurement_docs");
  c.eval_plains = a.at("eval_plains");
  c.min_len = d.at("min_len");
  c.max_len = d.at("max_len");
  c.seed = seed();
  c.config_hash = experiments::config_hash(resolved);
  return c;
}

experiments::TokenBiasConfig RunConfig::token_bias() const {
  const auto& a = resolved.at("token_bias");
  experiments::TokenBiasConfig c;
  c.k = a.at("k");
  c.pgd.alpha = a.at("alpha");
  c.pgd.epochs = a.at("epochs");
  c.pgd.entropy_floor = a.at("entropy_floor");
  c.pgd.change_budget = a.at("change_budget");
  c.retrain_epochs = a.at("retrain_epochs");
  c.measurement_docs = a.at("measurement_docs");
  c.seed = seed();
  c.config_hash = experiments::config_hash(resolved);
  return c;
}

Datasets load_datasets(const RunConfig& cfg) {
  const auto& d = cfg.resolved.at("data");
  const std::string src = d.at("source");
  const std::size_t train_n = d.at("train_count"), test_n = d.at("test_count");
  Datasets out;
  if (src == "synthetic-images") {
    experiments::SyntheticImageSpec s;
    const auto& im = d.at("image");
    s.classes = im.at("classes");
    s.channels = im.at("channels");
    s.size = im.at("size");
    s.bumps = im.at("bumps");
    s.noise = im.at("noise");
    s.max_shift = im.at("max_shift");
    s.seed = cfg.seed();
    out.train = experiments::gen_synthetic_images(s, train_n, 0);
    out.test = experiments::gen_synthetic_images(s, test_n, 1);
  } else if (src == "cifar10") {
    const std::filesystem::path dir = d.at("dir").get<std::string>();
    const int f = d.at("cifar_downscale");
    out.train = load_cifar10(dir, false);
    out.test = load_cifar10(dir, true);
    if (out.train.size() > train_n) out.train.resize(train_n);
    if (out.test.size() > test_n) out.test.resize(test_n);
    out.train = downscale_images(out.train, f);
    out.test = downscale_images(out.test, f);
  } else if (src == "cipher") {
    const auto& c = d.at("cipher");
    out.train = experiments::gen_cipher_dataset(c.at("n"), c.at("count"), c.at("min_len"), c.at("max_len"), cfg.seed());
  } else {
    out.train = experiments::gen_stories(experiments::story_vocab(), d.at("stories").at("count"), -1, cfg.seed());
  }
  return out;
}

}  // namespace infusion::io
