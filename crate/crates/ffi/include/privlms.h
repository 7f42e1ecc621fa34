#ifndef PRIVLMS_H
#define PRIVLMS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum PrivlmsStatus {
  PRIVLMS_STATUS_OK = 0,
  PRIVLMS_STATUS_NULL_ARGUMENT = 1,
  PRIVLMS_STATUS_INVALID_UTF8 = 2,
  PRIVLMS_STATUS_CONFIG = 3,
  PRIVLMS_STATUS_DIMENSION = 4,
  PRIVLMS_STATUS_ASSUMPTION = 5,
  PRIVLMS_STATUS_INFEASIBLE = 6,
  PRIVLMS_STATUS_NUMERICAL = 7,
  PRIVLMS_STATUS_UNSTABLE = 8,
  PRIVLMS_STATUS_DIMENSION_CAP = 9,
  PRIVLMS_STATUS_IO = 10,
  PRIVLMS_STATUS_SERIALIZATION = 11,
  PRIVLMS_STATUS_OUT_OF_RANGE = 12,
  PRIVLMS_STATUS_PANIC = 13,
} PrivlmsStatus;

/**
 * Curve column selector for [`privlms_bundle_curve`].
 */
typedef enum PrivlmsColumn {
  PRIVLMS_COLUMN_MSD_EMP_DB = 0,
  PRIVLMS_COLUMN_MSD_TH_DB = 1,
  PRIVLMS_COLUMN_XI_EMP_DB = 2,
  PRIVLMS_COLUMN_XI_TH_DB = 3,
  PRIVLMS_COLUMN_SIGMA_MEAN = 4,
} PrivlmsColumn;

/**
 * Opaque experiment result.
 */
typedef struct PrivlmsBundle PrivlmsBundle;

/**
 * Opaque scenario configuration.
 */
typedef struct PrivlmsConfig PrivlmsConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Text of the last error raised on this thread, or null.
 *
 * The pointer stays valid until the next library call on the same thread.
 */
const char *privlms_last_error_message(void);

/**
 * Release a string returned by this library.
 *
 * # Safety
 *
 * `s` must be null or a pointer obtained from this library that has not been freed.
 */
void privlms_string_free(char *s);

/**
 * Build a configuration from a preset name and optional JSON overrides.
 *
 * # Safety
 *
 * `name` must be a NUL-terminated string, `overrides_json` null or a
 * NUL-terminated string, and `out` a valid pointer to writable storage.
 */
enum PrivlmsStatus privlms_config_from_preset(const char *name,
                                              const char *overrides_json,
                                              struct PrivlmsConfig **out);

/**
 * Parse a full JSON configuration.
 *
 * # Safety
 *
 * `json` must be a NUL-terminated string and `out` a valid pointer to writable storage.
 */
enum PrivlmsStatus privlms_config_from_json(const char *json, struct PrivlmsConfig **out);

/**
 * JSON text of a configuration; null on a null handle.
 *
 * # Safety
 *
 * `cfg` must be null or a live handle from this library.
 */
char *privlms_config_to_json(const struct PrivlmsConfig *cfg);

/**
 * # Safety
 *
 * `cfg` must be null or a live handle from this library; it is invalid afterwards.
 */
void privlms_config_free(struct PrivlmsConfig *cfg);

/**
 * Run the configured experiment.
 *
 * # Safety
 *
 * `cfg` must be a live configuration handle and `out` a valid pointer to writable storage.
 */
enum PrivlmsStatus privlms_run(const struct PrivlmsConfig *cfg,
                               bool force,
                               struct PrivlmsBundle **out);

/**
 * # Safety
 *
 * `b` must be null or a live handle from this library; it is invalid afterwards.
 */
void privlms_bundle_free(struct PrivlmsBundle *b);

/**
 * Number of curve families, 0 for a null handle.
 *
 * # Safety
 *
 * `b` must be null or a live bundle handle.
 */
uintptr_t privlms_bundle_family_count(const struct PrivlmsBundle *b);

/**
 * Number of iterations per curve, 0 for a null handle.
 *
 * # Safety
 *
 * `b` must be null or a live bundle handle.
 */
uintptr_t privlms_bundle_iterations(const struct PrivlmsBundle *b);

/**
 * Label of family `index` (as used in CSV file names); null when out of range.
 *
 * # Safety
 *
 * `b` must be null or a live bundle handle.
 */
char *privlms_bundle_family_label(const struct PrivlmsBundle *b, uintptr_t index);

/**
 * Copy one curve column into `out`; missing values are written as NaN.
 *
 * # Safety
 *
 * `b` must be a live bundle handle and `out` must point to `len` writable doubles.
 */
enum PrivlmsStatus privlms_bundle_curve(const struct PrivlmsBundle *b,
                                        uintptr_t index,
                                        enum PrivlmsColumn column,
                                        double *out,
                                        uintptr_t len);

/**
 * Summary document as JSON text; null on a null handle.
 *
 * # Safety
 *
 * `b` must be null or a live bundle handle.
 */
char *privlms_bundle_summary_json(const struct PrivlmsBundle *b);

/**
 * Write CSV curves, summary and charts into `dir`.
 *
 * # Safety
 *
 * `b` must be a live bundle handle and `dir` a NUL-terminated path.
 */
enum PrivlmsStatus privlms_bundle_emit(const struct PrivlmsBundle *b, const char *dir);

/**
 * Sufficient privacy-noise power `‖U‖²_F / (tr W − δ)`.
 *
 * # Safety
 *
 * `u` and `w` must point to `m*m` doubles and `out` to one writable double.
 */
enum PrivlmsStatus privlms_sufficient_power(const double *u,
                                            const double *w,
                                            uintptr_t m,
                                            double delta,
                                            double *out);

/**
 * Limit privacy-noise power `tr(W²) / (tr W − δ)`.
 *
 * # Safety
 *
 * `w` must point to `m*m` doubles and `out` to one writable double.
 */
enum PrivlmsStatus privlms_steady_state_power(const double *w,
                                              uintptr_t m,
                                              double delta,
                                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIVLMS_H */
