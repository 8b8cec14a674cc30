#ifndef INFUSION_INFUSION_H
#define INFUSION_INFUSION_H

/* C interface to the INFUSION harness.
 *
 * Every function that can fail returns an infusion_status; on failure the
 * message is available from infusion_last_error() on the same thread until
 * the next call. Strings returned through char** are owned by the caller and
 * released with infusion_string_free(). */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define INFUSION_API __declspec(dllexport)
#else
#define INFUSION_API __attribute__((visibility("default")))
#endif

typedef enum infusion_status {
  INFUSION_OK = 0,
  INFUSION_ERR_INVALID_ARGUMENT = 1,
  INFUSION_ERR_SHAPE = 2,
  INFUSION_ERR_NON_FINITE = 3,
  INFUSION_ERR_CONFIG = 4,
  INFUSION_ERR_IO = 5,
  INFUSION_ERR_FORMAT = 6,
  INFUSION_ERR_CHECKSUM = 7,
  INFUSION_ERR_VERSION = 8,
  INFUSION_ERR_MISSING_ARTIFACT = 9,
  INFUSION_ERR_EMPTY = 10,
  INFUSION_ERR_NUMERIC = 11,
  INFUSION_ERR_UNSUPPORTED = 12,
  INFUSION_ERR_INTERNAL = 13
} infusion_status;

/* Resolved run configuration. */
typedef struct infusion_config infusion_config;

INFUSION_API const char* infusion_version(void);
INFUSION_API const char* infusion_status_name(infusion_status status);
INFUSION_API const char* infusion_last_error(void);
INFUSION_API void infusion_string_free(char* s);

INFUSION_API infusion_status infusion_config_load(const char* path, infusion_config** out);
INFUSION_API infusion_status infusion_config_from_json(const char* text, infusion_config** out);
/* Sets a dotted key ("attack.pgd.epsilon") and re-validates. `value` is parsed
 * as JSON; text that is not valid JSON is taken as a string. The handle is
 * unchanged on failure. */
INFUSION_API infusion_status infusion_config_set(infusion_config* cfg, const char* key, const char* value);
INFUSION_API infusion_status infusion_config_resolved_json(const infusion_config* cfg, char** out);
INFUSION_API void infusion_config_free(infusion_config* cfg);

/* `variant` is "main" or "transfer"; NULL means "main". */
INFUSION_API infusion_status infusion_train(const infusion_config* cfg, const char* variant, size_t* checkpoints);
INFUSION_API infusion_status infusion_curvature(const infusion_config* cfg, const char* variant);

/* Writes the ranking CSV for influence.probe / influence.target. */
INFUSION_API infusion_status infusion_influence(const infusion_config* cfg, char** csv_path);

/* Each appends results to the store and reports how many. */
INFUSION_API infusion_status infusion_attack(const infusion_config* cfg, size_t* appended);
INFUSION_API infusion_status infusion_transfer(const infusion_config* cfg, size_t* appended);
INFUSION_API infusion_status infusion_cipher(const infusion_config* cfg, size_t* appended);
INFUSION_API infusion_status infusion_token_bias(const infusion_config* cfg, size_t* appended);

/* Path of the results store the stages append to. */
INFUSION_API infusion_status infusion_results_path(const infusion_config* cfg, char** path);

/* Writes summary.csv and report.json into out_dir. An empty or missing store
 * is INFUSION_ERR_EMPTY. */
INFUSION_API infusion_status infusion_report(const char* results_path, const char* out_dir, size_t* records);

#ifdef __cplusplus
}
#endif

#endif
