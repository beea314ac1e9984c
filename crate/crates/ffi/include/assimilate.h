#ifndef ASSIMILATE_H
#define ASSIMILATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Resampling scheme selector.
typedef enum AsmScheme {
  ASM_SCHEME_MULTINOMIAL = 0,
  ASM_SCHEME_RESIDUAL = 1,
  ASM_SCHEME_SYSTEMATIC = 2,
} AsmScheme;

// Result code of every fallible call.
typedef enum AsmStatus {
  ASM_STATUS_OK = 0,
  ASM_STATUS_NULL_POINTER = 1,
  ASM_STATUS_INVALID_ARGUMENT = 2,
  ASM_STATUS_DIMENSION_MISMATCH = 3,
  ASM_STATUS_NUMERICAL = 4,
  ASM_STATUS_CONFIG = 5,
  ASM_STATUS_IO = 6,
  ASM_STATUS_BUFFER_TOO_SMALL = 7,
  ASM_STATUS_PANIC = 8,
} AsmStatus;

// Weighted ensemble of `size` members in dimension `dim`.
typedef struct AsmEnsemble AsmEnsemble;

// Validated experiment configuration.
typedef struct AsmExperiment AsmExperiment;

// Per-step diagnostics of a finished run.
typedef struct AsmMetrics AsmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *asm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *asm_version(void);

// Builds an ensemble from `dim * size` column-major values. `weights` may
// be null for uniform weights, otherwise it holds `size` values summing to 1.
//
// # Safety
// `members` must point to `dim * size` doubles, `weights` to `size` doubles
// or be null, and `out` must be a valid pointer.
enum AsmStatus asm_ensemble_new(size_t dim,
                                size_t size,
                                const double *members,
                                const double *weights,
                                struct AsmEnsemble **out);

// Releases an ensemble. Null is ignored.
//
// # Safety
// `e` must come from this library and not be used afterwards.
void asm_ensemble_free(struct AsmEnsemble *e);

// State dimension, or 0 for a null handle.
//
// # Safety
// `e` must be null or a live handle.
size_t asm_ensemble_dim(const struct AsmEnsemble *e);

// Number of members, or 0 for a null handle.
//
// # Safety
// `e` must be null or a live handle.
size_t asm_ensemble_size(const struct AsmEnsemble *e);

// Copies all members (`dim * size` values, column-major) into `out`.
//
// # Safety
// `out` must point to `len` writable doubles.
enum AsmStatus asm_ensemble_members(const struct AsmEnsemble *e, double *out, size_t len);

// Copies the `size` weights into `out`.
//
// # Safety
// `out` must point to `len` writable doubles.
enum AsmStatus asm_ensemble_weights(const struct AsmEnsemble *e, double *out, size_t len);

// Weighted mean, `dim` values.
//
// # Safety
// `out` must point to `len` writable doubles.
enum AsmStatus asm_ensemble_mean(const struct AsmEnsemble *e, double *out, size_t len);

// Weighted covariance, `dim * dim` values.
//
// # Safety
// `out` must point to `len` writable doubles.
enum AsmStatus asm_ensemble_cov(const struct AsmEnsemble *e, double *out, size_t len);

// Effective sample size `1 / Σ w²` written to `out`.
//
// # Safety
// `e` must be a live handle and `out` valid.
enum AsmStatus asm_ensemble_ess(const struct AsmEnsemble *e, double *out);

// Resamples to uniform weights. `scheme` takes an [`AsmScheme`] value; the
// same `seed` gives the same result.
//
// # Safety
// `e` must be a live handle and `out` valid.
enum AsmStatus asm_ensemble_resample(const struct AsmEnsemble *e,
                                     uint32_t scheme,
                                     uint64_t seed,
                                     struct AsmEnsemble **out);

// Deterministic square-root analysis with linear `H` (`obs_dim × dim`),
// noise covariance `R` and observation `y`, all column-major.
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum AsmStatus asm_ensemble_esrf_update(const struct AsmEnsemble *e,
                                        size_t obs_dim,
                                        const double *h,
                                        const double *r,
                                        const double *y,
                                        struct AsmEnsemble **out);

// Perturbed-observation ensemble Kalman analysis, seeded by `seed`.
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum AsmStatus asm_ensemble_enkf_update(const struct AsmEnsemble *e,
                                        size_t obs_dim,
                                        const double *h,
                                        const double *r,
                                        const double *y,
                                        uint64_t seed,
                                        struct AsmEnsemble **out);

// Parses and validates a TOML experiment description.
//
// # Safety
// `toml` must be a NUL-terminated UTF-8 string and `out` valid.
enum AsmStatus asm_experiment_from_toml(const char *toml, struct AsmExperiment **out);

// Releases an experiment. Null is ignored.
//
// # Safety
// `ex` must come from this library and not be used afterwards.
void asm_experiment_free(struct AsmExperiment *ex);

// Runs the twin experiment. Nothing is written to disk.
//
// # Safety
// `ex` must be a live handle and `out` valid.
enum AsmStatus asm_experiment_run(const struct AsmExperiment *ex, struct AsmMetrics **out);

// Releases a metrics record. Null is ignored.
//
// # Safety
// `m` must come from this library and not be used afterwards.
void asm_metrics_free(struct AsmMetrics *m);

// Number of recorded steps, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t asm_metrics_n_steps(const struct AsmMetrics *m);

// Per-step RMSE of the ensemble mean, `n_steps` values.
//
// # Safety
// `out` must point to `len` writable doubles.
enum AsmStatus asm_metrics_rmse(const struct AsmMetrics *m, double *out, size_t len);

// Time-averaged RMSE of the ensemble mean.
//
// # Safety
// `m` must be a live handle and `out` valid.
enum AsmStatus asm_metrics_mean_rmse(const struct AsmMetrics *m, double *out);

// Writes the metrics table as CSV. `needed` receives the byte count
// including the terminating NUL; pass a null `buf` to query it.
//
// # Safety
// `buf` must be null or point to `len` writable bytes; `needed` must be valid.
enum AsmStatus asm_metrics_csv(const struct AsmMetrics *m, char *buf, size_t len, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASSIMILATE_H */
