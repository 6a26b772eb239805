#ifndef CLP_LAB_H
#define CLP_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClpStatus {
  CLP_STATUS_OK = 0,
  CLP_STATUS_NULL_POINTER = 1,
  CLP_STATUS_INVALID_ARGUMENT = 2,
  CLP_STATUS_DIMENSION = 3,
  CLP_STATUS_PARSE = 4,
  CLP_STATUS_IO = 5,
  CLP_STATUS_DIVERGENCE = 6,
  CLP_STATUS_CONFIG = 7,
  CLP_STATUS_LAYOUT = 8,
  CLP_STATUS_BUFFER_TOO_SMALL = 9,
  CLP_STATUS_PANIC = 10,
} ClpStatus;

/**
 * Opaque CLP parameter bundle handle.
 */
typedef struct ClpBundle ClpBundle;

/**
 * Opaque environment handle.
 */
typedef struct ClpEnv ClpEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t clp_last_error_message(char *buf, size_t len);

/**
 * The built-in three-action counterexample.
 *
 * # Safety
 * `out` must be a valid pointer; the handle is released with [`clp_env_free`].
 */
enum ClpStatus clp_env_counterexample(struct ClpEnv **out);

/**
 * Random environment with uniform rewards in `[0, 1]`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ClpStatus clp_env_random(size_t contexts,
                              size_t actions,
                              size_t m,
                              uint64_t seed,
                              struct ClpEnv **out);

/**
 * Loads an environment from its text format.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ClpStatus clp_env_load(const char *path, struct ClpEnv **out);

/**
 * # Safety
 * `env` must be a live handle and `path` a NUL-terminated string.
 */
enum ClpStatus clp_env_save(const struct ClpEnv *env, const char *path);

/**
 * # Safety
 * `env` must be null or a handle not yet freed.
 */
void clp_env_free(struct ClpEnv *env);

/**
 * # Safety
 * `env` must be a live handle; output pointers must be valid.
 */
enum ClpStatus clp_env_dims(const struct ClpEnv *env, size_t *contexts, size_t *actions, size_t *m);

/**
 * Mixing coefficient for KL weight `alpha`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ClpStatus clp_f_mix(double alpha, double alpha_min, double *out);

/**
 * KL weight whose mixing coefficient is `u`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ClpStatus clp_inv_f_mix(double u, double alpha_min, double *out);

/**
 * Closed-form optimal policy for `w^T R` at KL weight `alpha`, written
 * row-major as `contexts x actions` probabilities.
 *
 * # Safety
 * `env` must be a live handle, `w` must point to `w_len` doubles and `out`
 * to `out_len` writable doubles.
 */
enum ClpStatus clp_optimal_policy(const struct ClpEnv *env,
                                  double alpha,
                                  const double *w,
                                  size_t w_len,
                                  double *out,
                                  size_t out_len);

/**
 * Loads a bundle checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ClpStatus clp_bundle_load(const char *path, struct ClpBundle **out);

/**
 * # Safety
 * `bundle` must be null or a handle not yet freed.
 */
void clp_bundle_free(struct ClpBundle *bundle);

/**
 * Number of rewards the bundle is conditioned on.
 *
 * # Safety
 * `bundle` must be a live handle and `m` a valid pointer.
 */
enum ClpStatus clp_bundle_m(const struct ClpBundle *bundle, size_t *m);

/**
 * Conditioned policy `pi(. | x; alpha, w)` on `env`, row-major `contexts x actions`.
 *
 * # Safety
 * Handles must be live, `w` must point to `w_len` doubles and `out` to
 * `out_len` writable doubles.
 */
enum ClpStatus clp_bundle_policy(const struct ClpBundle *bundle,
                                 const struct ClpEnv *env,
                                 double alpha,
                                 double alpha_min,
                                 const double *w,
                                 size_t w_len,
                                 double *out,
                                 size_t out_len);

/**
 * Sub-optimality bound for logit-mixing two experts; `+inf` when either
 * concentrability coefficient is infinite.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ClpStatus clp_mixing_bound(double eps,
                                double lambda,
                                double c_12,
                                double c_21,
                                double p_min,
                                double eta,
                                size_t num_actions,
                                double *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *clp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLP_LAB_H */
