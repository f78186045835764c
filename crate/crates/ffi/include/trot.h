#ifndef TROT_H
#define TROT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TrotStatus {
  TROT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TROT_STATUS_NULL_POINTER = 1,
  /**
   * Malformed problem, parameters or options.
   */
  TROT_STATUS_INVALID_INPUT = 2,
  /**
   * The solver gave up; see the message.
   */
  TROT_STATUS_NOT_CONVERGED = 3,
  /**
   * A numerical failure other than non-convergence.
   */
  TROT_STATUS_NUMERICAL = 4,
  /**
   * A caller-provided buffer is too small.
   */
  TROT_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * The requested value does not exist for this solution.
   */
  TROT_STATUS_UNAVAILABLE = 6,
  /**
   * Internal error. The library state is still valid.
   */
  TROT_STATUS_PANIC = 7,
} TrotStatus;

/**
 * Opaque transport problem `(r, c, M)`.
 */
typedef struct TrotProblem TrotProblem;

/**
 * Opaque solution: plan, trace summary and, for `q > 0`, duals.
 */
typedef struct TrotSolution TrotSolution;

/**
 * Solver options. Obtain defaults from [`trot_solver_options_default`].
 */
typedef struct TrotSolverOptions {
  size_t max_iters;
  /**
   * Bound on each marginal residual, in l1.
   */
  double marginal_tol;
  double objective_tol;
  /**
   * Safeguards of the second-order scaling solver (0 < q < 1).
   */
  bool production_mods;
} TrotSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *trot_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *trot_version(void);

/**
 * `exp_q(x)`. Past the pole for `q > 1` this is `DBL_MAX`.
 */
double trot_q_exp(double x, double q);

/**
 * `log_q(x)`, or NaN outside `x > 0`.
 */
double trot_q_log(double x, double q);

/**
 * Builds a problem from marginals `r` (length `n`), `c` (length `m`) and a
 * row-major `n × m` cost matrix. Marginals must be nonnegative and sum to 1.
 *
 * # Safety
 * `r`, `c` and `cost` must point to `n`, `m` and `n * m` doubles; `out`
 * must be a valid pointer to write the handle to.
 */
enum TrotStatus trot_problem_new(const double *r,
                                 size_t n,
                                 const double *c,
                                 size_t m,
                                 const double *cost,
                                 struct TrotProblem **out);

/**
 * Parses a problem from JSON `{"r": [...], "c": [...], "M": [[...], ...]}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum TrotStatus trot_problem_from_json(const char *json, struct TrotProblem **out);

/**
 * Frees a problem. Null is ignored.
 *
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void trot_problem_free(struct TrotProblem *p);

/**
 * Number of rows (length of `r`); 0 for null.
 *
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t trot_problem_rows(const struct TrotProblem *p);

/**
 * Number of columns (length of `c`); 0 for null.
 *
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t trot_problem_cols(const struct TrotProblem *p);

/**
 * Default solver options.
 */
struct TrotSolverOptions trot_solver_options_default(void);

/**
 * Solves `problem` at `(q, lambda)`. `options` may be null for defaults.
 *
 * A run that stops at the iteration cap still returns `TROT_STATUS_OK` and
 * a solution; check [`trot_solution_converged`].
 *
 * # Safety
 * `problem` must be a live handle, `options` null or valid, `out` valid.
 */
enum TrotStatus trot_solve(const struct TrotProblem *problem,
                           double q,
                           double lambda,
                           const struct TrotSolverOptions *options,
                           struct TrotSolution **out);

/**
 * Frees a solution. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void trot_solution_free(struct TrotSolution *s);

/**
 * Whether the solver met its stopping rule; false for null.
 *
 * # Safety
 * `s` must be null or a live solution handle.
 */
bool trot_solution_converged(const struct TrotSolution *s);

/**
 * Iterations performed; 0 for null.
 *
 * # Safety
 * `s` must be null or a live solution handle.
 */
size_t trot_solution_iterations(const struct TrotSolution *s);

/**
 * Larger of the two l1 marginal residuals; NaN for null.
 *
 * # Safety
 * `s` must be null or a live solution handle.
 */
double trot_solution_residual(const struct TrotSolution *s);

/**
 * Copies the row-major `n × m` plan into `buf`, which holds `len` doubles.
 *
 * # Safety
 * `s` must be a live handle and `buf` writable for `len` doubles.
 */
enum TrotStatus trot_solution_plan(const struct TrotSolution *s, double *buf, size_t len);

/**
 * Copies the recovered duals `α` (`n`) and `β` (`m`), with `α_0 = 0`.
 * `TROT_STATUS_UNAVAILABLE` for the unregularized problem (`q = 0`).
 *
 * # Safety
 * `s` must be a live handle; `alpha` and `beta` writable for `n` and `m`
 * doubles.
 */
enum TrotStatus trot_solution_duals(const struct TrotSolution *s,
                                    double *alpha,
                                    size_t n,
                                    double *beta,
                                    size_t m);

/**
 * Distance of the plan from the closed-form KKT solution at the recovered
 * duals; NaN when there are no duals or `s` is null.
 *
 * # Safety
 * `s` must be null or a live solution handle.
 */
double trot_solution_kkt_residual(const struct TrotSolution *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TROT_H */
