#ifndef OUSTAB_H
#define OUSTAB_H

/* Generated by cbindgen from the oustab-ffi sources; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a library call. Zero is success; anything else leaves a
 * description in `oustab_last_error_message`.
 */
typedef enum {
  OUSTAB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  OUSTAB_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  OUSTAB_STATUS_INVALID_UTF8 = 2,
  /**
   * The configuration text was malformed or inconsistent.
   */
  OUSTAB_STATUS_CONFIG = 3,
  /**
   * Input violated a structural precondition of the solver.
   */
  OUSTAB_STATUS_VALIDATION = 4,
  /**
   * A numerical routine failed.
   */
  OUSTAB_STATUS_NUMERICAL = 5,
  /**
   * The request is well-formed but outside what this build implements.
   */
  OUSTAB_STATUS_UNSUPPORTED = 6,
  OUSTAB_STATUS_IO = 7,
  /**
   * A panic was caught at the language boundary.
   */
  OUSTAB_STATUS_PANIC = 8,
} OustabStatus;

/**
 * Parsed problem description. Create with `oustab_problem_parse`, release
 * with `oustab_problem_free`.
 */
typedef struct OustabProblem OustabProblem;

/**
 * One Monte Carlo estimate. `value` is bounded by `sup_bound` pathwise,
 * so `|value| <= sup_bound` holds by construction, not just in the limit.
 */
typedef struct {
  double value;
  double std_error;
  double sup_bound;
} OustabEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never null; do not
 * free.
 */
const char *oustab_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread; do not free.
 */
const char *oustab_last_error_message(void);

/**
 * Releases a string returned through an out-parameter. Null is a no-op.
 *
 * # Safety
 * `s` must have come from this library and not have been freed already.
 */
void oustab_string_free(char *s);

/**
 * Parses a TOML problem description into a handle.
 *
 * # Safety
 * `toml_text` must be a NUL-terminated string; `out` must be writable.
 */
OustabStatus oustab_problem_parse(const char *toml_text, OustabProblem **out);

/**
 * Releases a problem handle. Null is a no-op.
 *
 * # Safety
 * `problem` must have come from `oustab_problem_parse` and not have been
 * freed already.
 */
void oustab_problem_free(OustabProblem *problem);

/**
 * Space dimension of the operator behind the handle.
 *
 * # Safety
 * `problem` must be a live handle; `out_dim` must be writable.
 */
OustabStatus oustab_problem_dim(const OustabProblem *problem, uintptr_t *out_dim);

/**
 * Block structure and driver diagnostics as a JSON document.
 *
 * # Safety
 * `problem` must be a live handle; `out_json` must be writable. The
 * returned string is released with `oustab_string_free`.
 */
OustabStatus oustab_analyze_json(const OustabProblem *problem, char **out_json);

/**
 * Estimates the solution at one space-time point. On scheduled problems a
 * positive `epsilon` sets the jump size; zero or negative selects the
 * smallest configured one. Unscheduled problems ignore it.
 *
 * # Safety
 * `problem` must be a live handle, `x` must point to `dim` doubles, and
 * `out` must be writable.
 */
OustabStatus oustab_solve(const OustabProblem *problem,
                          double t,
                          const double *x,
                          uintptr_t dim,
                          double epsilon,
                          OustabEstimate *out);

/**
 * Available experiment names with one-line descriptions, one per line,
 * tab-separated.
 *
 * # Safety
 * `out_text` must be writable. The returned string is released with
 * `oustab_string_free`.
 */
OustabStatus oustab_experiment_list(char **out_text);

/**
 * Runs one named verification experiment against the handle's problem.
 * `out_passed` receives the verdict; `out_summary` (optional, may be null)
 * a one-line account; `out_report_csv` (optional, may be null) the
 * measurement rows as CSV.
 *
 * # Safety
 * `problem` must be a live handle, `name` a NUL-terminated string, and
 * every non-null out-pointer writable. Returned strings are released with
 * `oustab_string_free`.
 */
OustabStatus oustab_run_experiment(const OustabProblem *problem,
                                   const char *name,
                                   bool *out_passed,
                                   char **out_summary,
                                   char **out_report_csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OUSTAB_H */
