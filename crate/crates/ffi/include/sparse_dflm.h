#ifndef SPARSE_DFLM_H
#define SPARSE_DFLM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum SdflmStatus {
  SDFLM_STATUS_OK = 0,
  SDFLM_STATUS_NULL_POINTER = 1,
  SDFLM_STATUS_INVALID_ARGUMENT = 2,
  SDFLM_STATUS_NON_FINITE = 3,
  SDFLM_STATUS_INFEASIBLE = 4,
  SDFLM_STATUS_FACTORIZATION = 5,
  SDFLM_STATUS_UNKNOWN_PROBLEM = 6,
  SDFLM_STATUS_IO = 7,
  SDFLM_STATUS_BUFFER_TOO_SMALL = 8,
  SDFLM_STATUS_PANIC = 9,
} SdflmStatus;

// Mirror of the solver's stop reasons.
typedef enum SdflmStopReason {
  SDFLM_STOP_REASON_STATIONARY = 0,
  SDFLM_STOP_REASON_SMALL_STEP = 1,
  SDFLM_STOP_REASON_SMALL_DECREASE = 2,
  SDFLM_STOP_REASON_MAX_FEVALS = 3,
  SDFLM_STOP_REASON_ERROR = 4,
} SdflmStopReason;

// Solver configuration.
typedef struct SdflmConfig SdflmConfig;

// A least-squares problem, built in or backed by a callback.
typedef struct SdflmProblem SdflmProblem;

// Outcome of one solver run.
typedef struct SdflmResult SdflmResult;

// Residual callback: write `F(x)` (length `m`) into `out` and return 0.
// A non-zero return marks the evaluation as failed.
typedef int (*SdflmResidualFn)(void *user, const double *x, size_t n, double *out, size_t m);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sdflm_version(void);

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *sdflm_last_error(void);

// Frees a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from a `*_to_json` call and not have been freed.
void sdflm_string_free(char *s);

// Default configuration for problems of dimension `n`.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum SdflmStatus sdflm_config_new(size_t n, struct SdflmConfig **out);

// Sets a field by dotted name, e.g. `("eta0", "1e-2")` or
// `("recovery.optimality_tol", "1e-9")`. `value` is JSON; bare words are
// read as strings.
//
// # Safety
// `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
enum SdflmStatus sdflm_config_set(struct SdflmConfig *cfg, const char *key, const char *value);

// Uses `p` probes in every model build.
//
// # Safety
// `cfg` must be a live handle.
enum SdflmStatus sdflm_config_set_fixed_p(struct SdflmConfig *cfg, size_t p);

// Seed of the sensing-matrix stream.
//
// # Safety
// `cfg` must be a live handle.
enum SdflmStatus sdflm_config_set_seed(struct SdflmConfig *cfg, uint64_t seed);

// The configuration as a JSON string; free with [`sdflm_string_free`].
// Returns NULL if `cfg` is NULL.
//
// # Safety
// `cfg` must be NULL or a live handle.
char *sdflm_config_to_json(const struct SdflmConfig *cfg);

// # Safety
// `cfg` must be NULL or a handle from [`sdflm_config_new`] not yet freed.
void sdflm_config_free(struct SdflmConfig *cfg);

// Problem with `m` residuals in `n` unknowns evaluated by `residual`,
// starting from `x0` (length `n`, copied). `user` is passed through
// untouched; it must outlive the problem handle.
//
// # Safety
// `name` must be a NUL-terminated string, `x0` must point to `n` doubles and
// `out` to writable storage.
enum SdflmStatus sdflm_problem_new(const char *name,
                                   size_t n,
                                   size_t m,
                                   const double *x0,
                                   SdflmResidualFn residual,
                                   void *user,
                                   struct SdflmProblem **out);

// A built-in problem family (`broyden`, `valley`, `freudenstein`, `trig`)
// at dimension `n`.
//
// # Safety
// `family` must be a NUL-terminated string and `out` writable.
enum SdflmStatus sdflm_problem_builtin(const char *family, size_t n, struct SdflmProblem **out);

// Number of unknowns, or 0 for NULL.
//
// # Safety
// `problem` must be NULL or a live handle.
size_t sdflm_problem_n(const struct SdflmProblem *problem);

// Number of residuals, or 0 for NULL.
//
// # Safety
// `problem` must be NULL or a live handle.
size_t sdflm_problem_m(const struct SdflmProblem *problem);

// # Safety
// `problem` must be NULL or a handle not yet freed.
void sdflm_problem_free(struct SdflmProblem *problem);

// Runs the sparse derivative-free solver. `cfg` may be NULL for the
// defaults of the problem's dimension. An evaluation failure during the run
// is not an error of this call: the result then reports
// `SDFLM_STOP_REASON_ERROR` and [`sdflm_result_error`] explains it.
//
// # Safety
// `problem` must be a live handle, `cfg` NULL or a live handle and `out`
// writable.
enum SdflmStatus sdflm_solve(const struct SdflmProblem *problem,
                             const struct SdflmConfig *cfg,
                             struct SdflmResult **out);

// Same loop with forward-difference Jacobians.
//
// # Safety
// As for [`sdflm_solve`].
enum SdflmStatus sdflm_solve_fd(const struct SdflmProblem *problem,
                                const struct SdflmConfig *cfg,
                                struct SdflmResult **out);

// `½‖F‖²` at the returned point; NaN for NULL.
//
// # Safety
// `res` must be NULL or a live handle.
double sdflm_result_final_f(const struct SdflmResult *res);

// # Safety
// `res` must be NULL or a live handle.
size_t sdflm_result_fevals(const struct SdflmResult *res);

// # Safety
// `res` must be NULL or a live handle.
size_t sdflm_result_iterations(const struct SdflmResult *res);

// Stop reason; `SDFLM_STOP_REASON_ERROR` for NULL.
//
// # Safety
// `res` must be NULL or a live handle.
enum SdflmStopReason sdflm_result_stop_reason(const struct SdflmResult *res);

// Runtime error message of a failed run, or NULL. Owned by the result.
//
// # Safety
// `res` must be NULL or a live handle.
const char *sdflm_result_error(const struct SdflmResult *res);

// Copies the final point into `buf` (capacity `len`). Fails with
// `SDFLM_STATUS_BUFFER_TOO_SMALL` if `len` is less than the dimension.
//
// # Safety
// `res` must be a live handle and `buf` point to `len` writable doubles.
enum SdflmStatus sdflm_result_x(const struct SdflmResult *res, double *buf, size_t len);

// Full run record (history and trace included) as JSON; free with
// [`sdflm_string_free`]. NULL if `res` is NULL.
//
// # Safety
// `res` must be NULL or a live handle.
char *sdflm_result_to_json(const struct SdflmResult *res);

// # Safety
// `res` must be NULL or a handle not yet freed.
void sdflm_result_free(struct SdflmResult *res);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPARSE_DFLM_H */
