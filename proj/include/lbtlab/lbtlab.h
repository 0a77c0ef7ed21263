#ifndef LBTLAB_H
#define LBTLAB_H

/*
 * C interface of the lbtlab shared library.
 *
 * Every fallible call returns an lbt_status. On failure the session keeps a
 * human-readable message (lbt_session_last_error) and, for configuration
 * errors, the 1-based line of the offending entry (lbt_session_error_line).
 * Strings returned by the library stay valid until the next call on the same
 * session or until the session is destroyed. A session must not be used from
 * two threads at once; distinct sessions are independent.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LBT_API __declspec(dllexport)
#else
#define LBT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lbt_status {
  LBT_OK = 0,
  LBT_ERR_ARGUMENT = 1, /* bad pointer, shape, or value passed by the caller */
  LBT_ERR_CONFIG = 2,   /* invalid configuration */
  LBT_ERR_NUMERIC = 3,  /* a run aborted on a non-finite value */
  LBT_ERR_CHECK = 4,    /* a verification check failed */
  LBT_ERR_IO = 5,       /* a file could not be read or written */
  LBT_ERR_INTERNAL = 6
} lbt_status;

typedef struct lbt_session lbt_session;
typedef struct lbt_mixture lbt_mixture;

/* Library version, e.g. "0.1.0". */
LBT_API const char* lbt_version(void);

/* Short name of a status code ("ok", "config", ...). */
LBT_API const char* lbt_status_name(lbt_status status);

LBT_API lbt_status lbt_session_create(lbt_session** out);
LBT_API void lbt_session_destroy(lbt_session* session);

/* Message of the last failed call, "" after a successful one. */
LBT_API const char* lbt_session_last_error(const lbt_session* session);
/* Line of the last configuration error, 0 when unknown or not applicable. */
LBT_API size_t lbt_session_error_line(const lbt_session* session);

/* Parses and validates a JSON configuration held in memory or in a file. */
LBT_API lbt_status lbt_session_load_config(lbt_session* session, const char* json_text);
LBT_API lbt_status lbt_session_load_config_file(lbt_session* session, const char* path);

/* Fully resolved configuration (defaults included) and its 16-digit hash.
 * Both require a loaded configuration and return NULL otherwise. */
LBT_API const char* lbt_session_config_json(lbt_session* session);
LBT_API const char* lbt_session_config_hash(lbt_session* session);

/*
 * Runs "train", "contour", "dynamics" or "check" with the loaded
 * configuration. out_dir (may be NULL) overrides the configured output
 * directory; seeds/n_seeds (may be NULL/0) override the seed list; threads
 * <= 0 falls back to LBT_LAB_THREADS, then 1. A run that completes with an
 * aborted seed returns LBT_ERR_NUMERIC and a failed check LBT_ERR_CHECK;
 * the summary is available either way.
 */
LBT_API lbt_status lbt_run(lbt_session* session, const char* command, const char* out_dir,
                           const uint64_t* seeds, size_t n_seeds, int threads);

/* JSON summary of the last lbt_run or lbt_metrics_evaluate, "" if none. */
LBT_API const char* lbt_session_result_json(const lbt_session* session);

/* Scores a samples CSV (header line, one sample per row) against a named
 * dataset. Writes metrics.json into out_dir when it is non-NULL. */
LBT_API lbt_status lbt_metrics_evaluate(lbt_session* session, const char* samples_csv,
                                        const char* dataset, const char* out_dir,
                                        int per_axis);

/* Target mixtures: "ring8", "grid25", "grid100", "bimodal1d". */
LBT_API lbt_status lbt_mixture_create(lbt_session* session, const char* dataset,
                                      lbt_mixture** out);
LBT_API void lbt_mixture_destroy(lbt_mixture* mixture);
LBT_API size_t lbt_mixture_dim(const lbt_mixture* mixture);
LBT_API size_t lbt_mixture_components(const lbt_mixture* mixture);

/* Writes n samples, row-major [n, dim], into out. */
LBT_API lbt_status lbt_mixture_sample(lbt_session* session, const lbt_mixture* mixture,
                                      uint64_t seed, size_t n, double* out);
/* Log density of n row-major points x [n, dim], written into out [n]. */
LBT_API lbt_status lbt_mixture_log_density(lbt_session* session, const lbt_mixture* mixture,
                                           const double* x, size_t n, double* out);

#ifdef __cplusplus
}
#endif

#endif /* LBTLAB_H */
