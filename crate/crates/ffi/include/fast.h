#ifndef FAST_H
#define FAST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum {
  FAST_STATUS_OK = 0,
  FAST_STATUS_NULL_POINTER = 1,
  FAST_STATUS_INVALID_ARGUMENT = 2,
  FAST_STATUS_IO = 3,
  FAST_STATUS_CHECKPOINT = 4,
  FAST_STATUS_CONFIG = 5,
  FAST_STATUS_NUMERIC = 6,
  FAST_STATUS_PANIC = 7,
} FastStatus;

/**
 * A loaded model. Opaque to C callers.
 */
typedef struct FastModelHandle FastModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *fast_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fast_version(void);

/**
 * Loads a checkpoint written by `fast train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
FastStatus fast_model_load(const char *path, FastModelHandle **out);

/**
 * Releases a handle from [`fast_model_load`]. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`fast_model_load`] and not be used afterwards.
 */
void fast_model_free(FastModelHandle *handle);

/**
 * Sensor count, history length and horizon of the model.
 *
 * # Safety
 * `handle` must be live; each output pointer must be writable or null.
 */
FastStatus fast_model_dims(const FastModelHandle *handle,
                           size_t *n_sensors,
                           size_t *t_hist,
                           size_t *t_horizon);

/**
 * Forecasts `[T_f, N]` raw-scale values from a raw-scale `[T_h, N]` window
 * whose first row falls at (`start_slot`, `start_dow`). Both buffers are
 * row-major; their lengths are checked against the model.
 *
 * # Safety
 * `window` must hold `window_len` readable floats and `out` `out_len`
 * writable floats.
 */
FastStatus fast_model_predict(const FastModelHandle *handle,
                              const float *window,
                              size_t window_len,
                              size_t start_slot,
                              size_t start_dow,
                              float *out,
                              size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAST_H */
