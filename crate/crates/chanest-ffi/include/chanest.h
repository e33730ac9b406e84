/* C interface of the chanest channel-estimation simulator.
 * Generated by cbindgen from crates/chanest-ffi; do not edit by hand. */

#pragma once

/* Generated with cbindgen:0.29.4 */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum ChanestStatus {
  // Success.
  CHANEST_STATUS_OK = 0,
  // A required pointer argument was null.
  CHANEST_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  CHANEST_STATUS_INVALID_STRING = 2,
  // The configuration is invalid (unknown key, bad value, failed
  // cross-field validation).
  CHANEST_STATUS_CONFIG_ERROR = 3,
  // The run itself failed (I/O, numerical failure).
  CHANEST_STATUS_RUNTIME_ERROR = 4,
  // An index was out of bounds.
  CHANEST_STATUS_OUT_OF_RANGE = 5,
  // No aggregate cell matches the requested estimator/SNR/metric.
  CHANEST_STATUS_NOT_FOUND = 6,
  // The callee panicked; the handle may be in an unusable state.
  CHANEST_STATUS_PANIC = 7,
} ChanestStatus;

// Which NMSE definition a record carries.
typedef enum ChanestMetric {
  // NMSE over the stacked direct/cascaded coefficient block.
  CHANEST_METRIC_DG_BLOCK = 0,
  // NMSE on the recombined effective channel.
  CHANEST_METRIC_EFFECTIVE = 1,
} ChanestMetric;

// Opaque experiment configuration handle.
typedef struct ChanestConfig ChanestConfig;

// Opaque result-set handle (sorted records plus aggregates).
typedef struct ChanestResults ChanestResults;

// One NMSE measurement, the C view of a CSV row. `estimator` is a
// NUL-terminated name (with any sweep suffix, e.g. `ls@b3`).
typedef struct ChanestRecord {
  char estimator[32];
  double snr_db;
  // 1-based user index.
  uint32_t user;
  uint64_t trial;
  enum ChanestMetric metric;
  double nmse;
} ChanestRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the underlying simulator crate, as a static NUL-terminated
// string.
const char *chanest_version(void);

// Copy the most recent error message of this thread into `buf` (always
// NUL-terminated when `cap > 0`) and return the full message length in
// bytes, excluding the terminator. Call with `buf = NULL` to query the
// required capacity.
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t chanest_last_error(char *buf, size_t cap);

// New config handle with the desk-scale preset. Never fails; free with
// `chanest_config_free`.
struct ChanestConfig *chanest_config_desk(void);

// New config handle with the full-scale preset. Never fails; free with
// `chanest_config_free`.
struct ChanestConfig *chanest_config_paper(void);

// New config handle from a config file applied on top of the desk preset.
// On success `*out` owns the handle.
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer;
// the returned handle must be released with `chanest_config_free`.
enum ChanestStatus chanest_config_load(const char *path, struct ChanestConfig **out);

// Set one configuration entry. `key` and `value` follow the text config
// format exactly (e.g. `snr_db` / `0,5,10,15`, `dip_schedule` / `2x5,1x1`).
// # Safety
// `config` must be a live handle from a `chanest_config_*` constructor;
// `key` and `value` must be NUL-terminated strings.
enum ChanestStatus chanest_config_set(struct ChanestConfig *config,
                                      const char *key,
                                      const char *value);

// Cross-field validation of the whole config, the same check a run
// performs first.
// # Safety
// `config` must be null or a live handle from a `chanest_config_*`
// constructor.
enum ChanestStatus chanest_config_validate(const struct ChanestConfig *config);

// Destroy a config handle. Null is a no-op.
// # Safety
// `config` must be null or a handle from a `chanest_config_*`
// constructor, not freed before.
void chanest_config_free(struct ChanestConfig *config);

// Run the configured experiment. On success `*out` owns a result set.
// # Safety
// `config` must be a live config handle and `out` a valid pointer; the
// returned handle must be released with `chanest_results_free`.
enum ChanestStatus chanest_run(const struct ChanestConfig *config, struct ChanestResults **out);

// Run the hardware-impairment sweep over `bits[0..bits_len]` plus the ideal
// arm. On success `*out` owns a result set.
// # Safety
// `config` must be a live config handle, `bits` must point to `bits_len`
// readable values, and `out` must be a valid pointer; the returned handle
// must be released with `chanest_results_free`.
enum ChanestStatus chanest_hwi_sweep(const struct ChanestConfig *config,
                                     const uint32_t *bits,
                                     size_t bits_len,
                                     struct ChanestResults **out);

// Number of NMSE records in a result set (0 for a null handle).
// # Safety
// `results` must be null or a live handle from `chanest_run` or
// `chanest_hwi_sweep`.
// # Safety
// `results` must be a live results handle and `out` a valid pointer.
size_t chanest_results_record_count(const struct ChanestResults *results);

// Copy record `index` (records are in canonical CSV order) into `*out`.
// # Safety
// `results` must be a live results handle and `out` a valid pointer.
enum ChanestStatus chanest_results_record(const struct ChanestResults *results,
                                          size_t index,
                                          struct ChanestRecord *out);

// Mean NMSE of one aggregate cell (estimator name including any sweep
// suffix, SNR point, metric).
// # Safety
// `results` must be a live results handle, `estimator` a NUL-terminated
// string, and `out` a valid pointer.
enum ChanestStatus chanest_results_mean_nmse(const struct ChanestResults *results,
                                             const char *estimator,
                                             double snr_db,
                                             enum ChanestMetric metric,
                                             double *out);

// Write the records as a CSV file (the same schema and canonical order the
// CLI produces).
// # Safety
// `results` must be a live results handle and `path` a NUL-terminated
// string.
enum ChanestStatus chanest_results_write_csv(const struct ChanestResults *results,
                                             const char *path);

// Destroy a result-set handle. Null is a no-op.
// # Safety
// `results` must be null or a handle from `chanest_run` or
// `chanest_hwi_sweep`, not freed before.
void chanest_results_free(struct ChanestResults *results);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
