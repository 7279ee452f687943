#ifndef SALTFIM_H
#define SALTFIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaltfimStatus {
  SALTFIM_STATUS_OK = 0,
  SALTFIM_STATUS_NULL_POINTER = 1,
  SALTFIM_STATUS_VALIDATION = 2,
  SALTFIM_STATUS_NUMERICAL = 3,
  SALTFIM_STATUS_IO = 4,
  SALTFIM_STATUS_PANIC = 5,
} SaltfimStatus;

// Opaque experiment handle.
typedef struct SaltfimExperiment SaltfimExperiment;

// Opaque run result handle.
typedef struct SaltfimRun SaltfimRun;

// Scalar summary of a Fisher information matrix.
typedef struct SaltfimMetrics {
  uintptr_t rank;
  double lambda_min_nonzero;
  double sigma;
  double logdet_regularized;
  double trace;
  double rank_threshold;
} SaltfimMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Owned by the library.
const char *saltfim_last_error(void);

// Library version as a static NUL-terminated string.
const char *saltfim_version(void);

// Saltation matrix for a parameter-free guard and reset.
//
// `dx_g` has `n` entries, `dx_r` is `n × n`, `dt_r`, `f_pre` and `f_post` have `n`
// entries (`dt_r` may be NULL for a time-invariant reset). `out` receives `n × n`.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum SaltfimStatus saltfim_saltation_matrix(uintptr_t n,
                                            const double *dx_g,
                                            double dt_g,
                                            const double *dx_r,
                                            const double *dt_r,
                                            const double *f_pre,
                                            const double *f_post,
                                            double floor,
                                            double *out);

// Rank, σ, regularized log-determinant and trace of a symmetric `p × p` matrix.
//
// # Safety
// `f` must reference `p * p` doubles and `out` a writable `SaltfimMetrics`.
enum SaltfimStatus saltfim_info_metrics(uintptr_t p,
                                        const double *f,
                                        double epsilon,
                                        struct SaltfimMetrics *out);

// Build an experiment from a JSON config. Relative `emit` paths resolve against the working directory.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum SaltfimStatus saltfim_experiment_from_json(const char *json,
                                                struct SaltfimExperiment **out);

// Load an experiment from a config file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum SaltfimStatus saltfim_experiment_load(const char *path, struct SaltfimExperiment **out);

// # Safety
// `exp` must come from this library and not be used afterwards.
void saltfim_experiment_free(struct SaltfimExperiment *exp);

// Number of parameters of the experiment's model.
//
// # Safety
// `exp` must be a live handle.
uintptr_t saltfim_experiment_param_count(const struct SaltfimExperiment *exp);

// Simulate and analyze. `use_seed = false` keeps the configured Monte Carlo seed.
//
// # Safety
// `exp` must be a live handle; `out` must be writable.
enum SaltfimStatus saltfim_experiment_run(const struct SaltfimExperiment *exp,
                                          bool use_seed,
                                          uint64_t seed,
                                          struct SaltfimRun **out);

// Comparison report for a comma-separated list of propagation modes, as JSON.
//
// # Safety
// `exp` must be a live handle, `modes` NUL-terminated, `out` writable.
// The string must be released with [`saltfim_string_free`].
enum SaltfimStatus saltfim_experiment_compare_json(const struct SaltfimExperiment *exp,
                                                   const char *modes,
                                                   char **out);

// Run report as JSON. Release with [`saltfim_string_free`].
//
// # Safety
// `run` must be a live handle; `out` must be writable.
enum SaltfimStatus saltfim_run_report_json(const struct SaltfimRun *run, char **out);

// Information matrix of analysis `index` (in configured mode order), row-major `p × p`.
//
// # Safety
// `run` must be a live handle; `out` must hold `p * p` doubles.
enum SaltfimStatus saltfim_run_fim(const struct SaltfimRun *run,
                                   uintptr_t index,
                                   uintptr_t p,
                                   double *out);

// Write the CSV and JSON artifacts of a run into `dir`.
//
// # Safety
// `run` must be a live handle and `dir` NUL-terminated.
enum SaltfimStatus saltfim_run_write(const struct SaltfimRun *run, const char *dir);

// # Safety
// `run` must come from this library and not be used afterwards.
void saltfim_run_free(struct SaltfimRun *run);

// # Safety
// `s` must be a string returned by this library.
void saltfim_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SALTFIM_H */
