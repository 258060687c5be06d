#ifndef SEMISEQ_H
#define SEMISEQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SemiseqStatus {
  SEMISEQ_STATUS_OK = 0,
  SEMISEQ_STATUS_NULL_POINTER = 1,
  SEMISEQ_STATUS_INVALID_ARGUMENT = 2,
  SEMISEQ_STATUS_IO = 3,
  SEMISEQ_STATUS_FORMAT = 4,
  SEMISEQ_STATUS_DIMENSION = 5,
  SEMISEQ_STATUS_NUMERIC = 6,
  SEMISEQ_STATUS_INSUFFICIENT_DATA = 7,
  SEMISEQ_STATUS_PANIC = 8,
} SemiseqStatus;

/**
 * A trained classifier with its input scaler.
 */
typedef struct SemiseqModel SemiseqModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *semiseq_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *semiseq_version(void);

/**
 * Load a model checkpoint written by `semiseq train`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum SemiseqStatus semiseq_model_load(const char *path, struct SemiseqModel **out);

/**
 * Release a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`semiseq_model_load`] and not be used afterwards.
 */
void semiseq_model_free(struct SemiseqModel *model);

/**
 * Number of input features the model expects per step.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SemiseqStatus semiseq_model_feature_count(const struct SemiseqModel *model, uintptr_t *out);

/**
 * Stress probabilities for raw (unscaled) windows.
 *
 * `data` is `windows × steps × features`, row-major; `out` receives `windows` values.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum SemiseqStatus semiseq_model_predict(const struct SemiseqModel *model,
                                         const double *data,
                                         uintptr_t windows,
                                         uintptr_t steps,
                                         uintptr_t features,
                                         double *out);

/**
 * Averaged, max-normalized saliency map over raw windows.
 *
 * `out` receives `steps × features` values, row-major.
 *
 * # Safety
 * Pointers must be valid for the stated sizes.
 */
enum SemiseqStatus semiseq_model_saliency(const struct SemiseqModel *model,
                                          const double *data,
                                          uintptr_t windows,
                                          uintptr_t steps,
                                          uintptr_t features,
                                          double *out);

/**
 * Time-domain HRV features of an RR series (ms); writes [`SEMISEQ_HRV_TIME_COUNT`] values.
 *
 * # Safety
 * `rr_ms` must hold `count` doubles and `out` room for the feature count.
 */
enum SemiseqStatus semiseq_hrv_time(const double *rr_ms, uintptr_t count, double *out);

/**
 * Frequency-domain HRV features with the default bands; writes [`SEMISEQ_HRV_FREQ_COUNT`] values.
 *
 * # Safety
 * `rr_ms` must hold `count` doubles and `out` room for the feature count.
 */
enum SemiseqStatus semiseq_hrv_freq(const double *rr_ms, uintptr_t count, double *out);

/**
 * Name of the `index`-th time-domain (`domain = 0`) or frequency-domain (`1`) HRV feature.
 * Returns null when out of range.
 */
const char *semiseq_hrv_feature_name(uint32_t domain, uintptr_t index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMISEQ_H */
