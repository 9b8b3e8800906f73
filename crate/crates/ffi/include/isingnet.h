#ifndef ISINGNET_H
#define ISINGNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IsingnetStatus {
  ISINGNET_STATUS_OK = 0,
  ISINGNET_STATUS_NULL_POINTER = 1,
  ISINGNET_STATUS_INVALID_ARGUMENT = 2,
  ISINGNET_STATUS_DIMENSION_MISMATCH = 3,
  ISINGNET_STATUS_INFEASIBLE = 4,
  ISINGNET_STATUS_NUMERICAL = 5,
  ISINGNET_STATUS_CAP_EXCEEDED = 6,
  ISINGNET_STATUS_BUFFER_TOO_SMALL = 7,
  ISINGNET_STATUS_IO = 8,
  ISINGNET_STATUS_INTERNAL = 9,
} IsingnetStatus;

/**
 * Moment constraints: failure probabilities and their correlation matrix.
 */
typedef struct IsingnetConstraints IsingnetConstraints;

/**
 * Fitted dichotomized Gaussian model.
 */
typedef struct IsingnetDg IsingnetDg;

/**
 * Fitted pairwise maximum-entropy model.
 */
typedef struct IsingnetIsing IsingnetIsing;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into the library on this
 * thread.
 */
const char *isingnet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *isingnet_version(void);

/**
 * Constraints from `d` failure probabilities and a `d * d` correlation matrix.
 * Pairs outside their attainable range give `ISINGNET_STATUS_INFEASIBLE`.
 *
 * # Safety
 * `means` must point to `d` doubles, `corr` to `d * d` doubles and `out` to
 * writable storage for one handle.
 */
enum IsingnetStatus isingnet_constraints_new(size_t d,
                                             const double *means,
                                             const double *corr,
                                             struct IsingnetConstraints **out);

/**
 * Constraints for `n` planar sites (kilometres) under a scenario with the
 * given magnitude and epicentre; remaining scenario parameters take their
 * defaults.
 *
 * # Safety
 * `x_km` and `y_km` must point to `n` doubles each; `out` must be writable.
 */
enum IsingnetStatus isingnet_constraints_from_hazard(size_t n,
                                                     const double *x_km,
                                                     const double *y_km,
                                                     double magnitude,
                                                     double epicenter_x_km,
                                                     double epicenter_y_km,
                                                     struct IsingnetConstraints **out);

/**
 * Reads a constraints directory written by the command-line tool.
 *
 * # Safety
 * `dir` must be a NUL-terminated path; `out` must be writable.
 */
enum IsingnetStatus isingnet_constraints_read(const char *dir, struct IsingnetConstraints **out);

/**
 * # Safety
 * `c` must be a live handle and `dir` a NUL-terminated path.
 */
enum IsingnetStatus isingnet_constraints_write(const struct IsingnetConstraints *c,
                                               const char *dir);

/**
 * Dimension of a constraint set, or 0 for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
size_t isingnet_constraints_dim(const struct IsingnetConstraints *c);

/**
 * Copies means (`d`) and correlations (`d * d`) out; either buffer may be null.
 *
 * # Safety
 * Non-null buffers must hold at least the stated lengths.
 */
enum IsingnetStatus isingnet_constraints_get(const struct IsingnetConstraints *c,
                                             double *means,
                                             size_t means_len,
                                             double *corr,
                                             size_t corr_len);

/**
 * # Safety
 * `c` must be null or a handle not yet freed.
 */
void isingnet_constraints_free(struct IsingnetConstraints *c);

/**
 * Ising model from a `d * d` coupling matrix.
 *
 * # Safety
 * `coupling` must point to `d * d` doubles; `out` must be writable.
 */
enum IsingnetStatus isingnet_ising_new(size_t d,
                                       const double *coupling,
                                       struct IsingnetIsing **out);

/**
 * Maximum-likelihood fit. `config_json` may be null for defaults or a JSON
 * training configuration; `converged` may be null.
 *
 * # Safety
 * `c` must be a live handle, `config_json` null or NUL-terminated, `out`
 * writable.
 */
enum IsingnetStatus isingnet_ising_fit_ml(const struct IsingnetConstraints *c,
                                          const char *config_json,
                                          struct IsingnetIsing **out,
                                          bool *converged);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
size_t isingnet_ising_dim(const struct IsingnetIsing *m);

/**
 * # Safety
 * `out` must hold `len >= d * d` doubles.
 */
enum IsingnetStatus isingnet_ising_coupling(const struct IsingnetIsing *m, double *out, size_t len);

/**
 * Exact second-moment matrix `E[x xᵀ]` by enumeration; refuses `d > cap`.
 *
 * # Safety
 * `out` must hold `len >= d * d` doubles.
 */
enum IsingnetStatus isingnet_ising_moments_exact(const struct IsingnetIsing *m,
                                                 size_t cap,
                                                 double *out,
                                                 size_t len);

/**
 * `n` Gibbs samples after `burn_in` sweeps.
 *
 * # Safety
 * `out` must hold `len >= n * d` bytes.
 */
enum IsingnetStatus isingnet_ising_sample(const struct IsingnetIsing *m,
                                          size_t n,
                                          size_t burn_in,
                                          uint64_t seed,
                                          uint8_t *out,
                                          size_t len);

/**
 * Exact entropy in nats; refuses `d > cap`.
 *
 * # Safety
 * `value` must be writable.
 */
enum IsingnetStatus isingnet_ising_entropy_exact(const struct IsingnetIsing *m,
                                                 size_t cap,
                                                 double *value);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void isingnet_ising_free(struct IsingnetIsing *m);

/**
 * # Safety
 * `c` must be a live handle; `out` writable.
 */
enum IsingnetStatus isingnet_dg_fit(const struct IsingnetConstraints *c, struct IsingnetDg **out);

/**
 * # Safety
 * `m` must be null or a live handle.
 */
size_t isingnet_dg_dim(const struct IsingnetDg *m);

/**
 * Thresholds (`d`) and latent correlation (`d * d`); either buffer may be null.
 *
 * # Safety
 * Non-null buffers must hold at least the stated lengths.
 */
enum IsingnetStatus isingnet_dg_params(const struct IsingnetDg *m,
                                       double *gamma,
                                       size_t gamma_len,
                                       double *latent,
                                       size_t latent_len);

/**
 * `n` independent draws.
 *
 * # Safety
 * `out` must hold `len >= n * d` bytes.
 */
enum IsingnetStatus isingnet_dg_sample(const struct IsingnetDg *m,
                                       size_t n,
                                       uint64_t seed,
                                       uint8_t *out,
                                       size_t len);

/**
 * Monte Carlo entropy in nats with its standard error; `std_error` may be null.
 *
 * # Safety
 * `value` must be writable.
 */
enum IsingnetStatus isingnet_dg_entropy_mc(const struct IsingnetDg *m,
                                           size_t n_outer,
                                           size_t n_pmf,
                                           uint64_t seed,
                                           double *value,
                                           double *std_error);

/**
 * # Safety
 * `m` must be null or a handle not yet freed.
 */
void isingnet_dg_free(struct IsingnetDg *m);

/**
 * Balances a `rows * cols` matrix to row targets `target_o` and column
 * targets `target_d`. The result goes to `out` (same shape); `iterations`
 * and `error` may be null.
 *
 * # Safety
 * Array arguments must hold the stated lengths.
 */
enum IsingnetStatus isingnet_ipf(size_t rows,
                                 size_t cols,
                                 const double *init,
                                 const double *target_o,
                                 const double *target_d,
                                 double eps0,
                                 size_t max_iters,
                                 double *out,
                                 size_t *iterations,
                                 double *error);

/**
 * Mean log peak ground acceleration at epicentral distance `r_km`.
 */
double isingnet_attenuation(double magnitude, double r_km);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISINGNET_H */
