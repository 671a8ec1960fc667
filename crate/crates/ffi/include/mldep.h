#ifndef MLDEP_H
#define MLDEP_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MldepStatus {
  MLDEP_STATUS_OK = 0,
  MLDEP_STATUS_NULL_POINTER = 1,
  MLDEP_STATUS_INVALID_ARGUMENT = 2,
  MLDEP_STATUS_DIMENSION_MISMATCH = 3,
  MLDEP_STATUS_NUMERICAL = 4,
  MLDEP_STATUS_INTERNAL = 5,
} MldepStatus;

/**
 * Centered Gaussian law.
 */
typedef struct MldepGaussian MldepGaussian;

/**
 * Row-major samples, `n` rows of `dim` values.
 */
typedef struct MldepSamples MldepSamples;

/**
 * Multilevel dependence structure on the torus.
 */
typedef struct MldepStructure MldepStructure;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message (NUL terminated, truncated to `len`) and
 * returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mldep_last_error_message(char *buf, size_t len);

/**
 * Creates N(0, cov) from a row-major `dim`×`dim` covariance.
 *
 * # Safety
 * `cov` must point to `dim*dim` values; `out` must be writable.
 */
enum MldepStatus mldep_gaussian_new(size_t dim,
                                    const double *cov,
                                    struct MldepGaussian **out_handle);

/**
 * # Safety
 * `h` must be null or come from [`mldep_gaussian_new`].
 */
void mldep_gaussian_free(struct MldepGaussian *h);

/**
 * # Safety
 * `x` must point to `dim` values.
 */
enum MldepStatus mldep_gaussian_pdf(const struct MldepGaussian *h,
                                    const double *x,
                                    size_t dim,
                                    double *out_value);

/**
 * # Safety
 * `out_handle` must be writable.
 */
enum MldepStatus mldep_structure_new(size_t d,
                                     size_t side,
                                     double k,
                                     double gamma,
                                     double b,
                                     bool periodic,
                                     struct MldepStructure **out_handle);

/**
 * # Safety
 * `h` must be null or come from [`mldep_structure_new`].
 */
void mldep_structure_free(struct MldepStructure *h);

/**
 * # Safety
 * Pointers must be valid.
 */
enum MldepStatus mldep_structure_index_count(const struct MldepStructure *h, size_t *out_count);

/**
 * Dependency indicator between indices at flat positions `i` and `j`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MldepStatus mldep_structure_chi(const struct MldepStructure *h,
                                     size_t i,
                                     size_t j,
                                     bool *out_chi);

/**
 * W1 between the empirical law of `values` and N(0, sigma2).
 *
 * # Safety
 * `values` must point to `n` values.
 */
enum MldepStatus mldep_w1_empirical_gaussian(const double *values,
                                             size_t n,
                                             double sigma2,
                                             double *out_value);

/**
 * One-sided Bennett tail bound; `exact` selects the h-function form.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum MldepStatus mldep_bennett_bound(double sigma2,
                                     double a,
                                     double r,
                                     bool exact,
                                     double *out_value);

/**
 * Draws `n` realizations of X from a named preset.
 *
 * # Safety
 * `preset` must be a NUL-terminated string; `out_handle` writable.
 */
enum MldepStatus mldep_monte_carlo(const char *preset,
                                   size_t dim,
                                   size_t d,
                                   size_t side,
                                   size_t n,
                                   uint64_t seed,
                                   struct MldepSamples **out_handle);

/**
 * # Safety
 * `h` must be null or come from [`mldep_monte_carlo`].
 */
void mldep_samples_free(struct MldepSamples *h);

/**
 * # Safety
 * Pointers must be valid.
 */
enum MldepStatus mldep_samples_shape(const struct MldepSamples *h, size_t *out_n, size_t *out_dim);

/**
 * Copies the row-major values into `buf`, which must hold `len` ≥ n·dim.
 *
 * # Safety
 * `buf` must point to `len` writable values.
 */
enum MldepStatus mldep_samples_copy(const struct MldepSamples *h, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLDEP_H */
