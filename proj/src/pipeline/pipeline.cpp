#include "pipeline/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "common/error.hpp"
#include "experiments/cipher_attack.hpp"
#include "experiments/results.hpp"
#include "experiments/token_bias.hpp"
#include "models/model.hpp"

namespace infusion::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path checkpoint_path(const fs::path& dir, int epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
  return dir / "checkpoints" / name.str();
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

models::ModelSpec variant_spec(const io::RunConfig& cfg, const std::string& variant) {
  if (variant == "main") return cfg.model();
  if (variant == "transfer") return cfg.transfer_model();
  fail(ErrorCode::invalid_argument, "unknown model variant '" + variant + "' (expected main or transfer)");
}

void require_source(const io::RunConfig& cfg, const std::string& source, const std::string& stage) {
  require(cfg.data_source() == source, ErrorCode::config,
          "`" + stage + "` needs data.source = " + source + " (config has " + cfg.data_source() + ")");
}

void require_images(const io::RunConfig& cfg, const std::string& stage) {
  const auto src = cfg.data_source();
  require(src == "synthetic-images" || src == "cifar10", ErrorCode::config,
          "`" + stage + "` needs an image data source (config has " + src + ")");
}

std::size_t append_all(const io::RunConfig& cfg, const std::vector<experiments::ExperimentResult>& results) {
  for (const auto& r : results) experiments::append_result(cfg.results_path(), r);
  return results.size();
}

json matrix_json(const experiments::TransferMatrix& m) {
  json grid = json::array();
  for (int i = 0; i < m.classes; ++i) {
    json row = json::array();
    for (int j = 0; j < m.classes; ++j) {
      const double v = m.best_dp[static_cast<std::size_t>(i * m.classes + j)];
      row.push_back(std::isnan(v) ? json(nullptr) : json(v));
    }
    grid.push_back(row);
  }
  return {{"source", m.source}, {"evaluator", m.evaluator}, {"classes", m.classes}, {"best_dp_target", grid}};
}

}  // namespace

fs::path variant_dir(const io::RunConfig& cfg, const std::string& variant) {
  variant_spec(cfg, variant);
  return cfg.run_dir() / variant;
}

std::size_t train_stage(const io::RunConfig& cfg, const std::string& variant) {
  const auto spec = variant_spec(cfg, variant);
  const auto data = io::load_datasets(cfg);
  const auto dir = variant_dir(cfg, variant);
  fs::remove_all(dir / "checkpoints");
  fs::remove(dir / "ekfac.bin");
  auto history = models::train(data.train, spec, cfg.train());
  for (const auto& ck : history) models::save_checkpoint(ck, checkpoint_path(dir, ck.epoch));
  write_json(cfg.run_dir() / "config.resolved.json", cfg.resolved);
  return history.size();
}

std::vector<models::Checkpoint> load_history(const io::RunConfig& cfg, const std::string& variant) {
  const auto dir = variant_dir(cfg, variant);
  std::vector<models::Checkpoint> history;
  for (int e = 0; fs::exists(checkpoint_path(dir, e)); ++e) history.push_back(models::load_checkpoint(checkpoint_path(dir, e)));
  require(!history.empty(), ErrorCode::missing_artifact,
          "no checkpoints in " + (dir / "checkpoints").string() + ": run `train`" +
              (variant == "main" ? "" : " --variant " + variant) + " first");
  require(history.back().spec.to_json() == variant_spec(cfg, variant).to_json(), ErrorCode::config,
          "checkpoints in " + dir.string() + " were trained with a different model: rerun `train`");
  return history;
}

void curvature_stage(const io::RunConfig& cfg, const std::string& variant) {
  auto history = load_history(cfg, variant);
  const auto data = io::load_datasets(cfg);
  auto state = curvature::build_ekfac(history.back(), data.train, cfg.fisher(), cfg.seed(), cfg.damping());
  curvature::save_ekfac(state, variant_dir(cfg, variant) / "ekfac.bin");
}

experiments::AttackModel load_attack_model(const io::RunConfig& cfg, const std::string& variant, bool keep_doc_grads) {
  auto history = load_history(cfg, variant);
  const auto path = variant_dir(cfg, variant) / "ekfac.bin";
  require(fs::exists(path), ErrorCode::missing_artifact,
          "no curvature artifact at " + path.string() + ": run `curvature`" +
              (variant == "main" ? "" : " --variant " + variant) + " first");
  experiments::AttackModel m;
  m.name = history.back().spec.arch == models::Arch::res_cnn && !history.back().spec.residual
               ? "cnn"
               : models::arch_name(history.back().spec.arch);
  m.state = curvature::load_ekfac(path);
  // the EK-FAC damping is a config value, not part of the artifact's identity
  m.state.damping = cfg.damping();
  m.history = std::move(history);
  if (keep_doc_grads) {
    const auto data = io::load_datasets(cfg);
    auto net = models::make_network(m.history.back().spec);
    m.doc_grads = models::per_example_grads(*net, m.history.back().params, data.train);
  }
  return m;
}

fs::path influence_stage(const io::RunConfig& cfg) {
  auto model = load_attack_model(cfg, "main", false);
  const auto data = io::load_datasets(cfg);
  const auto& inf = cfg.resolved.at("influence");
  const int probe = inf.at("probe"), target = inf.at("target");
  influence::MeasurementSpec m;
  const auto src = cfg.data_source();
  if (src == "cipher") {
    const int n = cfg.resolved.at("data").at("cipher").at("n");
    const auto c = cfg.cipher();
    m.kind = influence::MeasurementKind::avg_loss;
    m.set = experiments::shift_measurement_set(
        n, probe, target, experiments::gen_plaintexts(n, c.measurement_docs, c.min_len, c.max_len, cfg.seed()));
  } else if (src == "stories") {
    const auto v = experiments::story_vocab();
    require(probe >= 0 && probe < static_cast<int>(v.animals.size()) && target >= 0 &&
                target < static_cast<int>(v.animals.size()),
            ErrorCode::config, "influence.probe / influence.target must index the animal words");
    m.kind = influence::MeasurementKind::contrastive_token;
    m.set = experiments::gen_stories(v, cfg.token_bias().measurement_docs, probe, cfg.seed());
    m.probe_token = v.animals[static_cast<std::size_t>(probe)];
    m.target_token = v.animals[static_cast<std::size_t>(target)];
  } else {
    require(probe >= 0 && static_cast<std::size_t>(probe) < data.test.size(), ErrorCode::config,
            "influence.probe is outside the test set");
    m.kind = influence::MeasurementKind::target_class_logprob;
    m.set = {data.test[static_cast<std::size_t>(probe)]};
    m.target_class = target;
  }
  auto scores = influence::influence_scores(model.state, model.history.back(), m, data.train);
  const auto path = cfg.run_dir() / "influence" /
                    ("rankings_p" + std::to_string(probe) + "_t" + std::to_string(target) + ".csv");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  influence::write_rankings_csv(scores, path);
  return path;
}

std::size_t attack_stage(const io::RunConfig& cfg) {
  require_images(cfg, "attack");
  auto model = load_attack_model(cfg, "main", true);
  const auto data = io::load_datasets(cfg);
  auto ac = cfg.attack();
  ac.plan_dir = (cfg.run_dir() / "plans" / "attack").string();
  const std::size_t probes = cfg.resolved.at("attack").at("probes");
  auto pairs = experiments::all_target_pairs(data.test, probes, cfg.model().num_classes);
  return append_all(cfg, experiments::run_image_attack(model, data.train, data.test, pairs, ac));
}

std::size_t transfer_stage(const io::RunConfig& cfg) {
  require_images(cfg, "transfer");
  auto a = load_attack_model(cfg, "main", true);
  auto b = load_attack_model(cfg, "transfer", true);
  const auto data = io::load_datasets(cfg);
  auto ac = cfg.attack();
  ac.plan_dir = (cfg.run_dir() / "plans" / "transfer").string();
  const std::size_t probes = cfg.resolved.at("transfer").at("probes");
  const int classes = cfg.model().num_classes;
  auto out = experiments::run_transfer(a, b, data.train, data.test, experiments::all_target_pairs(data.test, probes, classes),
                                       ac, classes);
  json ms = json::array();
  for (const auto& m : out.matrices) ms.push_back(matrix_json(m));
  write_json(cfg.run_dir() / "transfer" / "matrices.json", ms);
  return append_all(cfg, out.results);
}

std::size_t cipher_stage(const io::RunConfig& cfg) {
  require_source(cfg, "cipher", "cipher");
  auto model = load_attack_model(cfg, "main", false);
  const auto data = io::load_datasets(cfg);
  const int n = cfg.resolved.at("data").at("cipher").at("n");
  auto pairs = experiments::all_shift_pairs(n);
  const std::size_t limit = cfg.resolved.at("cipher").at("pairs");
  if (limit > 0 && limit < pairs.size()) pairs.resize(limit);
  auto run = experiments::run_cipher(model, data.train, n, pairs, cfg.cipher());
  const auto& a = run.analysis;
  json gcd = json::array();
  for (const auto& b : a.gcd) gcd.push_back({{"gcd", b.gcd}, {"count", b.count}, {"mean", b.mean}, {"se", b.se}});
  json before = json::array();
  for (int i = 0; i < n; ++i)
    before.push_back(std::vector<double>(run.before.values.begin() + i * n, run.before.values.begin() + (i + 1) * n));
  write_json(cfg.run_dir() / "cipher" / "analysis.json",
             {{"n", n},
              {"ce_before", before},
              {"circulant_score", a.circulant.score},
              {"circulant_degenerate", a.circulant.degenerate},
              {"diagonal_min_rate", a.diagonal_min_rate},
              {"gcd_buckets", gcd},
              {"mean_targeting_shared_factor", a.mean_shared_factor},
              {"mean_targeting_coprime", a.mean_coprime},
              {"ce_dce_pearson", a.ce_dce_pearson}});
  return append_all(cfg, run.results);
}

std::size_t token_bias_stage(const io::RunConfig& cfg) {
  require_source(cfg, "stories", "token-bias");
  auto model = load_attack_model(cfg, "main", false);
  const auto data = io::load_datasets(cfg);
  const auto v = experiments::story_vocab();
  const std::size_t animals = cfg.resolved.at("token_bias").at("animals");
  auto pairs = experiments::word_pairs(v, animals);
  pairs.push_back({0, 0});  // probe = target control
  return append_all(cfg, experiments::run_token_bias(model, data.train, v, pairs, cfg.token_bias()));
}

std::size_t report_stage(const fs::path& results, const fs::path& out_dir) {
  auto rs = experiments::load_results(results);
  require(!rs.empty(), ErrorCode::empty, "no results in " + results.string() + ": nothing to report");
  experiments::write_summary_csv(experiments::summarize(rs), out_dir / "summary.csv");
  write_json(out_dir / "report.json", experiments::figure_report(rs));
  return rs.size();
}

}  // namespace infusion::pipeline
