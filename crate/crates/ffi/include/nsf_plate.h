#ifndef NSF_PLATE_H
#define NSF_PLATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NsfpStatus {
  NSFP_STATUS_OK = 0,
  NSFP_STATUS_NULL_POINTER = 1,
  NSFP_STATUS_INVALID_UTF8 = 2,
  NSFP_STATUS_CONFIG = 3,
  NSFP_STATUS_NUMERICAL = 4,
  NSFP_STATUS_GEOMETRY = 5,
  NSFP_STATUS_BUFFER_TOO_SMALL = 6,
  NSFP_STATUS_NOT_FOUND = 7,
  NSFP_STATUS_PANIC = 8,
} NsfpStatus;

/**
 * Parsed and validated run configuration.
 */
typedef struct NsfpConfig NsfpConfig;

/**
 * Assembled linearized fluid-structure operator.
 */
typedef struct NsfpOperator NsfpOperator;

/**
 * Report of a completed run.
 */
typedef struct NsfpReport NsfpReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nsfp_version(void);

/**
 * Last error message of this thread, or null. Valid until the next call
 * into the library on the same thread.
 */
const char *nsfp_last_error_message(void);

/**
 * Parses a TOML configuration document.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum NsfpStatus nsfp_config_parse(const char *text, struct NsfpConfig **out);

/**
 * # Safety
 * `cfg` must come from [`nsfp_config_parse`] and not be freed twice.
 */
void nsfp_config_free(struct NsfpConfig *cfg);

/**
 * Runs the configuration, writing artifacts under `out_dir`. A report is
 * produced even when the run fails; its exit code tells the outcome.
 *
 * # Safety
 * `cfg` must be a live handle, `out_dir` a NUL-terminated path, `out` writable.
 */
enum NsfpStatus nsfp_run(const struct NsfpConfig *cfg,
                         const char *out_dir,
                         struct NsfpReport **out);

/**
 * Process-style exit code of the run (0 pass, 2 validation, 3 numerical,
 * 4 geometry); -1 for a null handle.
 *
 * # Safety
 * `rep` must be null or a live handle.
 */
int32_t nsfp_report_exit_code(const struct NsfpReport *rep);

/**
 * Copies the rendered report text.
 *
 * # Safety
 * `rep` must be a live handle; `buf` must hold `len` bytes or be null;
 * `needed` must be null or writable.
 */
enum NsfpStatus nsfp_report_text(const struct NsfpReport *rep,
                                 char *buf,
                                 size_t len,
                                 size_t *needed);

/**
 * Copies the value of the named check line.
 *
 * # Safety
 * As for [`nsfp_report_text`]; `name` must be NUL-terminated.
 */
enum NsfpStatus nsfp_report_value(const struct NsfpReport *rep,
                                  const char *name,
                                  char *buf,
                                  size_t len,
                                  size_t *needed);

/**
 * # Safety
 * `rep` must come from [`nsfp_run`] and not be freed twice.
 */
void nsfp_report_free(struct NsfpReport *rep);

/**
 * Assembles the linearized operator for the configured grid and parameters.
 *
 * # Safety
 * `cfg` must be a live handle and `out` writable.
 */
enum NsfpStatus nsfp_operator_assemble(const struct NsfpConfig *cfg, struct NsfpOperator **out);

/**
 * Stacked dimension; 0 for a null handle.
 *
 * # Safety
 * `op` must be null or a live handle.
 */
size_t nsfp_operator_dim(const struct NsfpOperator *op);

/**
 * `y = A x` with `x`, `y` of length `n` (the operator dimension).
 *
 * # Safety
 * `x` and `y` must point to `n` doubles.
 */
enum NsfpStatus nsfp_operator_apply(const struct NsfpOperator *op,
                                    const double *x,
                                    double *y,
                                    size_t n);

/**
 * Largest real part of the spectrum on the conserved subspace.
 *
 * # Safety
 * `op` must be a live handle and `out` writable.
 */
enum NsfpStatus nsfp_operator_spectrum_max_re(const struct NsfpOperator *op, double *out);

/**
 * # Safety
 * `op` must come from [`nsfp_operator_assemble`] and not be freed twice.
 */
void nsfp_operator_free(struct NsfpOperator *op);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NSF_PLATE_H */
