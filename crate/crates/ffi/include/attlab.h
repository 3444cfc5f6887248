#ifndef ATTLAB_H
#define ATTLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call.
 */
typedef enum AttlabStatus {
  ATTLAB_STATUS_OK = 0,
  ATTLAB_STATUS_NULL_POINTER = 1,
  ATTLAB_STATUS_INVALID_ARGUMENT = 2,
  ATTLAB_STATUS_DATA_ERROR = 3,
  ATTLAB_STATUS_NUMERICAL_ERROR = 4,
  ATTLAB_STATUS_BUFFER_TOO_SMALL = 5,
  ATTLAB_STATUS_PANIC = 6,
} AttlabStatus;

/**
 * Covariate layout of the input files.
 */
typedef enum AttlabSchema {
  ATTLAB_SCHEMA_LDW = 0,
  ATTLAB_SCHEMA_LALONDE_ORIGINAL = 1,
} AttlabSchema;

/**
 * Opaque sample handle.
 */
typedef struct AttlabTable AttlabTable;

typedef struct AttlabOptions {
  uint64_t seed;
  size_t trees;
  size_t dml_folds;
  size_t match_k;
} AttlabOptions;

typedef struct AttlabEstimate {
  double point;
  double se;
  double ci_lo;
  double ci_hi;
  size_t n_treated;
  size_t n_control;
} AttlabEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library defaults with seed 0.
 */
struct AttlabOptions attlab_options_default(void);

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call on this thread.
 */
const char *attlab_last_error(void);

/**
 * Library version as a static string.
 */
const char *attlab_version(void);

/**
 * Loads a treated file and a control file and stacks them into one sample.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum AttlabStatus attlab_table_load(const char *treated_path,
                                    const char *controls_path,
                                    enum AttlabSchema schema,
                                    struct AttlabTable **out);

/**
 * Builds a sample from row-major covariates `x` (`n * p`), 0/1 treatment
 * `w` and outcome `y`. Covariates are named `x0`, `x1`, ...
 *
 * # Safety
 * `x` must hold `n * p` values, `w` and `y` must hold `n`; `out` must be writable.
 */
enum AttlabStatus attlab_table_from_arrays(size_t n,
                                           size_t p,
                                           const double *x,
                                           const uint8_t *w,
                                           const double *y,
                                           struct AttlabTable **out);

/**
 * Releases a table. Null is ignored.
 *
 * # Safety
 * `table` must come from this library and not be used afterwards.
 */
void attlab_table_free(struct AttlabTable *table);

/**
 * Row, treated and covariate counts.
 *
 * # Safety
 * `table` must be a live handle; outputs must be writable.
 */
enum AttlabStatus attlab_table_dims(const struct AttlabTable *table,
                                    size_t *n,
                                    size_t *n_treated,
                                    size_t *p);

/**
 * Runs one estimator, named by its tag (`diff_in_means`, `aipw`, ...).
 *
 * # Safety
 * `table` must be a live handle, `estimator` a NUL-terminated string and
 * `out` writable.
 */
enum AttlabStatus attlab_estimate(const struct AttlabTable *table,
                                  const char *estimator,
                                  struct AttlabOptions options,
                                  struct AttlabEstimate *out);

/**
 * Causal-forest CATT at each treated unit, in row order. Writes the count
 * to `len`; returns `BufferTooSmall` if `capacity` is short.
 *
 * # Safety
 * `table` must be a live handle; `values` must hold `capacity` doubles.
 */
enum AttlabStatus attlab_catt(const struct AttlabTable *table,
                              struct AttlabOptions options,
                              double *values,
                              size_t capacity,
                              size_t *len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTLAB_H */
