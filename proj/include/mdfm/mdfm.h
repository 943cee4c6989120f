#ifndef MDFM_H
#define MDFM_H

/* C interface of the mdfm library. Every function returning int returns an
 * mdfm_status; on failure the message is available from mdfm_last_error()
 * on the same thread. Strings handed out through char ** are owned by the
 * caller and released with mdfm_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MDFM_API __declspec(dllexport)
#elif defined(__GNUC__)
#define MDFM_API __attribute__((visibility("default")))
#else
#define MDFM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mdfm_status {
  MDFM_OK = 0,
  MDFM_ERR_USAGE = 1,
  MDFM_ERR_NUMERICAL = 2,
  MDFM_ERR_DATA = 3,
  MDFM_ERR_INTERNAL = 4
} mdfm_status;

typedef struct mdfm_config mdfm_config;
typedef struct mdfm_dataset mdfm_dataset;
typedef struct mdfm_posterior mdfm_posterior;

MDFM_API const char *mdfm_version(void);
MDFM_API const char *mdfm_last_error(void);
MDFM_API int mdfm_last_error_code(void);
MDFM_API void mdfm_string_free(char *s);

/* The published config schema (static storage, do not free). */
MDFM_API const char *mdfm_config_schema(void);

/* Config handles. A NULL or empty text is the empty config. */
MDFM_API int mdfm_config_parse(const char *json_text, mdfm_config **out);
MDFM_API int mdfm_config_load(const char *path, mdfm_config **out);
/* Sets a dotted key such as "mcmc.draws"; value is JSON or a bare string.
 * The config is revalidated and left unchanged on failure. */
MDFM_API int mdfm_config_set(mdfm_config *cfg, const char *key, const char *value);
MDFM_API int mdfm_config_set_seed(mdfm_config *cfg, uint64_t seed);
MDFM_API int mdfm_config_to_json(const mdfm_config *cfg, char **out);
MDFM_API void mdfm_config_free(mdfm_config *cfg);

/* Datasets. values is time-major: values[(t * k + j) * n + i] = Y_t(i, j). */
MDFM_API int mdfm_dataset_load(const mdfm_config *cfg, mdfm_dataset **out);
MDFM_API int mdfm_dataset_from_array(int T, int n, int k, const double *values,
                                     mdfm_dataset **out);
/* Simulates from the config; truth_json (may be NULL) receives the DGP. */
MDFM_API int mdfm_dataset_simulate(const mdfm_config *cfg, mdfm_dataset **out,
                                   char **truth_json);
MDFM_API int mdfm_dataset_dims(const mdfm_dataset *ds, int *T, int *n, int *k);
MDFM_API int mdfm_dataset_values(const mdfm_dataset *ds, double *out, size_t len);
MDFM_API int mdfm_dataset_write_csv(const mdfm_dataset *ds, const char *path);
MDFM_API void mdfm_dataset_free(mdfm_dataset *ds);

/* Posterior sampling and persistence. */
MDFM_API int mdfm_fit(const mdfm_config *cfg, const mdfm_dataset *ds, mdfm_posterior **out);
MDFM_API int mdfm_posterior_save(const mdfm_posterior *post, const char *dir);
MDFM_API int mdfm_posterior_load(const char *dir, mdfm_posterior **out);
MDFM_API int mdfm_posterior_summary(const mdfm_posterior *post, char **json_out);
MDFM_API int mdfm_posterior_draw_count(const mdfm_posterior *post, int *count);
/* Posterior mean factor path, row-major T x (p1 p2). */
MDFM_API int mdfm_posterior_factor_mean(const mdfm_posterior *post, double *out,
                                        size_t len, int *T, int *p);
MDFM_API void mdfm_posterior_free(mdfm_posterior *post);

/* Model comparison. post may be NULL, in which case a chain is run. */
MDFM_API int mdfm_log_ml(const mdfm_config *cfg, const mdfm_dataset *ds,
                         const mdfm_posterior *post, char **json_out);
MDFM_API int mdfm_scan(const mdfm_config *cfg, const mdfm_dataset *ds, char **json_out);
/* out_dir may be NULL or empty to skip writing files. */
MDFM_API int mdfm_experiment(const mdfm_config *cfg, const char *out_dir, char **json_out);
MDFM_API int mdfm_report(const char *dir, const char *out_dir, char **json_out);

#ifdef __cplusplus
}
#endif

#endif
