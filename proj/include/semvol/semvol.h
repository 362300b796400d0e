#ifndef SEMVOL_SEMVOL_H
#define SEMVOL_SEMVOL_H

#include <stddef.h>

#if defined(SEMVOL_BUILDING)
#define SEMVOL_API __attribute__((visibility("default")))
#else
#define SEMVOL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status values double as CLI exit codes. */
typedef enum semvol_status {
  SEMVOL_OK = 0,
  SEMVOL_ERR_CONFIG = 2,
  SEMVOL_ERR_IO = 3,
  SEMVOL_ERR_REMOTE = 4,
  SEMVOL_ERR_NUMERICAL = 5
} semvol_status;

typedef struct semvol_config semvol_config;

SEMVOL_API const char *semvol_version(void);

/* JSON text {"error":{"code","message","context"}} describing the last
 * failure on the calling thread; "" after a success. */
SEMVOL_API const char *semvol_last_error(void);

SEMVOL_API semvol_status semvol_config_create(semvol_config **out);
SEMVOL_API void semvol_config_destroy(semvol_config *cfg);

/* Option keys are the long flag names with '_' separators, e.g.
 * "cluster_threshold" or "out_dir". Values are text. */
SEMVOL_API semvol_status semvol_config_set(semvol_config *cfg, const char *key, const char *value);

/* Copies the NUL-terminated value into buf when it fits; *needed receives
 * the size including the terminator. */
SEMVOL_API semvol_status semvol_config_get(const semvol_config *cfg, const char *key, char *buf,
                                           size_t buf_len, size_t *needed);

SEMVOL_API size_t semvol_option_count(void);
SEMVOL_API const char *semvol_option_key(size_t index);

SEMVOL_API semvol_status semvol_config_load_file(semvol_config *cfg, const char *path);
SEMVOL_API semvol_status semvol_config_apply_env(semvol_config *cfg);

SEMVOL_API semvol_status semvol_cmd_perturb(const semvol_config *cfg);
SEMVOL_API semvol_status semvol_cmd_embed(const semvol_config *cfg);
SEMVOL_API semvol_status semvol_cmd_score(const semvol_config *cfg);
SEMVOL_API semvol_status semvol_cmd_calibrate(const semvol_config *cfg);
SEMVOL_API semvol_status semvol_cmd_classify(const semvol_config *cfg);
SEMVOL_API semvol_status semvol_cmd_evaluate(const semvol_config *cfg);
SEMVOL_API semvol_status semvol_cmd_diagnose(const semvol_config *cfg);
SEMVOL_API semvol_status semvol_cmd_verify_theory(const semvol_config *cfg);

/* Embeddings are column-major: column j holds the dim values of vector j.
 * Columns are unit-normalized before use. */
SEMVOL_API semvol_status semvol_log_det_gram(const double *columns, size_t dim, size_t count,
                                             double epsilon, double *out);
SEMVOL_API semvol_status semvol_semantic_volume(const double *columns, size_t dim, size_t count,
                                                size_t d, double epsilon, double *out);
SEMVOL_API semvol_status semvol_rouge_l(const char *candidate, const char *reference, double *out);

#ifdef __cplusplus
}
#endif

#endif
