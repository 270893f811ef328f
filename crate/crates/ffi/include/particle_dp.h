#ifndef PARTICLE_DP_H
#define PARTICLE_DP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdpStatus {
  PDP_STATUS_OK = 0,
  PDP_STATUS_NULL_POINTER = 1,
  PDP_STATUS_INVALID_ARGUMENT = 2,
  PDP_STATUS_CONFIG = 3,
  PDP_STATUS_DIMENSION = 4,
  PDP_STATUS_OUTSIDE_STATE_SPACE = 5,
  PDP_STATUS_INFEASIBLE_STATE = 6,
  PDP_STATUS_NO_SUPPORT_OVERLAP = 7,
  PDP_STATUS_ALL_INFEASIBLE = 8,
  PDP_STATUS_NOT_CONVERGED = 9,
  PDP_STATUS_IO = 10,
  PDP_STATUS_BUFFER_TOO_SMALL = 11,
  PDP_STATUS_INTERNAL = 12,
  PDP_STATUS_PANIC = 13,
} PdpStatus;

/**
 * Opaque solved problem.
 */
typedef struct PdpSolution PdpSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pdp_version(void);

/**
 * Message describing the last failed call on this thread, or an empty
 * string. Valid until the next call into the library on the same thread.
 */
const char *pdp_last_error_message(void);

/**
 * Solves the problem described by a TOML config document. `threads == 0`
 * uses all cores. A solve that stops at `max_iters` still returns a handle;
 * check `pdp_solution_converged`.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdpStatus pdp_solve_config(const char *config_toml, size_t threads, struct PdpSolution **out);

/**
 * Like `pdp_solve_config`, reading the config from a file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdpStatus pdp_solve_config_file(const char *path, size_t threads, struct PdpSolution **out);

/**
 * Loads a solution directory written by `pdp solve` or `pdp_solution_write`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PdpStatus pdp_load_archive(const char *path, struct PdpSolution **out);

/**
 * Writes all artifacts of a solve (CSVs, report, archive) into `dir`.
 * Only handles produced by a solve can be written.
 *
 * # Safety
 * `sol` must be a live handle and `dir` a NUL-terminated string.
 */
enum PdpStatus pdp_solution_write(const struct PdpSolution *sol, const char *dir);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sol` must be null or a handle not yet freed.
 */
void pdp_solution_free(struct PdpSolution *sol);

/**
 * Sizes of a solution. Any output pointer may be null.
 *
 * # Safety
 * `sol` must be a live handle; non-null outputs must be valid.
 */
enum PdpStatus pdp_solution_dims(const struct PdpSolution *sol,
                                 size_t *state_dim,
                                 size_t *control_dim,
                                 size_t *particles,
                                 size_t *controls,
                                 size_t *stages);

/**
 * 1 if value iteration converged (always 1 for finite horizon), else 0.
 *
 * # Safety
 * `sol` must be a live handle.
 */
int32_t pdp_solution_converged(const struct PdpSolution *sol);

/**
 * Evaluates the value and the minimizing control at `x` for decision
 * `stage` (0 for discounted solutions). `control_out` may be null;
 * otherwise it must hold `control_len >= control_dim` doubles.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum PdpStatus pdp_evaluate(const struct PdpSolution *sol,
                            size_t stage,
                            const double *x,
                            size_t x_len,
                            double *value_out,
                            double *control_out,
                            size_t control_len);

/**
 * Value at `x` (stage 0).
 *
 * # Safety
 * `x` must hold `x_len` doubles and `value_out` be valid.
 */
enum PdpStatus pdp_eval_value(const struct PdpSolution *sol,
                              const double *x,
                              size_t x_len,
                              double *value_out);

/**
 * Minimizing control at `x` (stage 0).
 *
 * # Safety
 * `x` must hold `x_len` doubles and `control_out` `control_len` doubles.
 */
enum PdpStatus pdp_eval_policy(const struct PdpSolution *sol,
                               const double *x,
                               size_t x_len,
                               double *control_out,
                               size_t control_len);

/**
 * Copies the particle weights of `stage` into `out`. For discounted
 * solutions only stage 0 exists; finite-horizon solutions have stages
 * `0..=T`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum PdpStatus pdp_solution_weights(const struct PdpSolution *sol,
                                    size_t stage,
                                    double *out,
                                    size_t len);

/**
 * Copies the particle positions, row-major `particles × state_dim`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum PdpStatus pdp_solution_particles(const struct PdpSolution *sol, double *out, size_t len);

/**
 * Discounted LQR reference: solves for `X` (n×n), gain `K` (m×n) and
 * offset `q`. Matrices are row-major. `x_out` and `k_out` may be null.
 *
 * # Safety
 * Inputs must hold n×n (`f`, `q`, `noise_cov`), n×m (`b`) and m×m (`r`)
 * doubles; non-null outputs n×n, m×n and one double.
 */
enum PdpStatus pdp_riccati(size_t n,
                           size_t m,
                           const double *f,
                           const double *b,
                           const double *q,
                           const double *r,
                           double alpha,
                           const double *noise_cov,
                           double *x_out,
                           double *k_out,
                           double *q_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARTICLE_DP_H */
