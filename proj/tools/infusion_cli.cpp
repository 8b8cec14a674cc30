// infusion: command-line front end over the C API.
//
//   infusion --config run.json train [--variant transfer]
//   infusion --config run.json curvature
//   infusion --config run.json attack --set attack.k=50
//   infusion report --results runs/x/results.jsonl --out runs/x/report

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "infusion/infusion.h"

namespace {

int report_failure(const char* stage, infusion_status s) {
  std::fprintf(stderr, "infusion %s: %s error: %s\n", stage, infusion_status_name(s), infusion_last_error());
  return static_cast<int>(s);
}

struct Config {
  infusion_config* h = nullptr;
  ~Config() { infusion_config_free(h); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Influence-guided training-data poisoning harness"};
  app.set_version_flag("--version", std::string(infusion_version()));
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "Override a config key, e.g. --set attack.k=50 (repeatable)");

  std::string variant = "main";
  auto* train = app.add_subcommand("train", "Train a model and save per-epoch checkpoints");
  train->add_option("--variant", variant, "main or transfer")->check(CLI::IsMember({"main", "transfer"}));
  auto* curvature = app.add_subcommand("curvature", "Fit EK-FAC curvature at the final checkpoint");
  curvature->add_option("--variant", variant, "main or transfer")->check(CLI::IsMember({"main", "transfer"}));
  auto* influence = app.add_subcommand("influence", "Rank training documents for influence.probe / influence.target");
  auto* attack = app.add_subcommand("attack", "Image attack over all probe/target pairs");
  auto* transfer = app.add_subcommand("transfer", "Cross-architecture transfer grid");
  auto* cipher = app.add_subcommand("cipher", "Caesar-shift attack over shift pairs");
  auto* token_bias = app.add_subcommand("token-bias", "Animal-word bias attack on the story model");

  std::string results, out_dir;
  auto* report = app.add_subcommand("report", "Summary CSV and figure JSON from a results store");
  report->add_option("--results", results, "Results store (default: from --config)");
  report->add_option("--out", out_dir, "Output directory (default: <run_dir>/report)");

  CLI11_PARSE(app, argc, argv);

  Config cfg;
  const bool need_config = !report->parsed() || results.empty() || out_dir.empty();
  if (need_config) {
    if (config_path.empty()) {
      std::fprintf(stderr, "infusion: --config is required for this command\n");
      return static_cast<int>(INFUSION_ERR_INVALID_ARGUMENT);
    }
    if (auto s = infusion_config_load(config_path.c_str(), &cfg.h)) return report_failure("config", s);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "infusion: --set expects key=value, got '%s'\n", o.c_str());
        return static_cast<int>(INFUSION_ERR_INVALID_ARGUMENT);
      }
      if (auto s = infusion_config_set(cfg.h, o.substr(0, eq).c_str(), o.substr(eq + 1).c_str()))
        return report_failure("config", s);
    }
  }

  size_t n = 0;
  infusion_status s = INFUSION_OK;
  if (train->parsed()) {
    if ((s = infusion_train(cfg.h, variant.c_str(), &n))) return report_failure("train", s);
    std::printf("train: %zu checkpoints (%s)\n", n, variant.c_str());
  } else if (curvature->parsed()) {
    if ((s = infusion_curvature(cfg.h, variant.c_str()))) return report_failure("curvature", s);
    std::printf("curvature: done (%s)\n", variant.c_str());
  } else if (influence->parsed()) {
    char* path = nullptr;
    if ((s = infusion_influence(cfg.h, &path))) return report_failure("influence", s);
    std::printf("influence: %s\n", path);
    infusion_string_free(path);
  } else if (report->parsed()) {
    if (results.empty() || out_dir.empty()) {
      char* rp = nullptr;
      if ((s = infusion_results_path(cfg.h, &rp))) return report_failure("report", s);
      if (results.empty()) results = rp;
      if (out_dir.empty()) out_dir = (std::filesystem::path(rp).parent_path() / "report").string();
      infusion_string_free(rp);
    }
    if ((s = infusion_report(results.c_str(), out_dir.c_str(), &n))) return report_failure("report", s);
    std::printf("report: %zu records -> %s\n", n, out_dir.c_str());
  } else {
    struct Stage {
      CLI::App* cmd;
      const char* name;
      infusion_status (*fn)(const infusion_config*, size_t*);
    };
    for (const Stage& st : {Stage{attack, "attack", infusion_attack}, Stage{transfer, "transfer", infusion_transfer},
                            Stage{cipher, "cipher", infusion_cipher}, Stage{token_bias, "token-bias", infusion_token_bias}}) {
      if (!st.cmd->parsed()) continue;
      if ((s = st.fn(cfg.h, &n))) return report_failure(st.name, s);
      char* rp = nullptr;
      infusion_results_path(cfg.h, &rp);
      std::printf("%s: %zu results appended to %s\n", st.name, n, rp ? rp : "?");
      infusion_string_free(rp);
    }
  }
  return 0;
}
