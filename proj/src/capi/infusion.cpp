#include "infusion/infusion.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <new>
#include <string>

#include "common/error.hpp"
#include "io/config.hpp"
#include "json.hpp"
#include "pipeline/pipeline.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

struct infusion_config {
  infusion::io::RunConfig cfg;
};

namespace {

thread_local std::string last_error;

infusion_status fail_with(infusion_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

template <class F>
infusion_status guarded(F&& f) {
  last_error.clear();
  try {
    f();
    return INFUSION_OK;
  } catch (const infusion::Error& e) {
    return fail_with(static_cast<infusion_status>(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail_with(INFUSION_ERR_CONFIG, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail_with(INFUSION_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail_with(INFUSION_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail_with(INFUSION_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail_with(INFUSION_ERR_INTERNAL, "unknown exception");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string variant_or_main(const char* variant) { return variant ? variant : "main"; }

void check_handle(const void* p, const char* what) {
  infusion::require(p != nullptr, infusion::ErrorCode::invalid_argument, std::string(what) + " is NULL");
}

template <class Stage>
infusion_status count_stage(const infusion_config* cfg, size_t* appended, Stage stage) {
  return guarded([&] {
    check_handle(cfg, "config");
    const std::size_t n = stage(cfg->cfg);
    if (appended) *appended = n;
  });
}

}  // namespace

extern "C" {

const char* infusion_version(void) { return "0.1.0"; }

const char* infusion_status_name(infusion_status status) {
  if (status == INFUSION_OK) return "ok";
  if (status == INFUSION_ERR_INTERNAL) return "internal";
  if (status < INFUSION_OK || status > INFUSION_ERR_INTERNAL) return "unknown";
  return infusion::error_code_name(static_cast<infusion::ErrorCode>(status));
}

const char* infusion_last_error(void) { return last_error.c_str(); }

void infusion_string_free(char* s) { std::free(s); }

infusion_status infusion_config_load(const char* path, infusion_config** out) {
  return guarded([&] {
    check_handle(path, "path");
    check_handle(out, "out");
    *out = new infusion_config{infusion::io::parse_config(path)};
  });
}

infusion_status infusion_config_from_json(const char* text, infusion_config** out) {
  return guarded([&] {
    check_handle(text, "text");
    check_handle(out, "out");
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      infusion::fail(infusion::ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
    }
    *out = new infusion_config{infusion::io::resolve_config(j)};
  });
}

infusion_status infusion_config_set(infusion_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    check_handle(cfg, "config");
    check_handle(key, "key");
    check_handle(value, "value");
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded()) v = std::string(value);
    json user = cfg->cfg.user;
    json* cur = &user;
    std::string k = key;
    infusion::require(!k.empty(), infusion::ErrorCode::config, "empty config key");
    std::size_t pos = 0;
    for (auto dot = k.find('.'); dot != std::string::npos; dot = k.find('.', pos)) {
      cur = &(*cur)[k.substr(pos, dot - pos)];
      if (!cur->is_object()) *cur = json::object();
      pos = dot + 1;
    }
    (*cur)[k.substr(pos)] = v;
    cfg->cfg = infusion::io::resolve_config(user);
  });
}

infusion_status infusion_config_resolved_json(const infusion_config* cfg, char** out) {
  return guarded([&] {
    check_handle(cfg, "config");
    check_handle(out, "out");
    *out = dup_string(cfg->cfg.resolved.dump(2));
  });
}

void infusion_config_free(infusion_config* cfg) { delete cfg; }

infusion_status infusion_train(const infusion_config* cfg, const char* variant, size_t* checkpoints) {
  return count_stage(cfg, checkpoints, [&](const auto& c) {
    return infusion::pipeline::train_stage(c, variant_or_main(variant));
  });
}

infusion_status infusion_curvature(const infusion_config* cfg, const char* variant) {
  return guarded([&] {
    check_handle(cfg, "config");
    infusion::pipeline::curvature_stage(cfg->cfg, variant_or_main(variant));
  });
}

infusion_status infusion_influence(const infusion_config* cfg, char** csv_path) {
  return guarded([&] {
    check_handle(cfg, "config");
    const auto p = infusion::pipeline::influence_stage(cfg->cfg);
    if (csv_path) *csv_path = dup_string(p.string());
  });
}

infusion_status infusion_attack(const infusion_config* cfg, size_t* appended) {
  return count_stage(cfg, appended, infusion::pipeline::attack_stage);
}

infusion_status infusion_transfer(const infusion_config* cfg, size_t* appended) {
  return count_stage(cfg, appended, infusion::pipeline::transfer_stage);
}

infusion_status infusion_cipher(const infusion_config* cfg, size_t* appended) {
  return count_stage(cfg, appended, infusion::pipeline::cipher_stage);
}

infusion_status infusion_token_bias(const infusion_config* cfg, size_t* appended) {
  return count_stage(cfg, appended, infusion::pipeline::token_bias_stage);
}

infusion_status infusion_results_path(const infusion_config* cfg, char** path) {
  return guarded([&] {
    check_handle(cfg, "config");
    check_handle(path, "path");
    *path = dup_string(cfg->cfg.results_path().string());
  });
}

infusion_status infusion_report(const char* results_path, const char* out_dir, size_t* records) {
  return guarded([&] {
    check_handle(results_path, "results_path");
    check_handle(out_dir, "out_dir");
    const std::size_t n = infusion::pipeline::report_stage(results_path, out_dir);
    if (records) *records = n;
  });
}

}  // extern "C"
