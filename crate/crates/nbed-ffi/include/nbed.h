/* C interface for the nbed edge detector. Generated by cbindgen; do not edit. */

#ifndef NBED_H
#define NBED_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum NbedStatus {
  NbedOk = 0,
  /**
   * A required pointer argument was null.
   */
  NbedNullArgument = 1,
  NbedInvalidConfig = 2,
  NbedBadData = 3,
  NbedBadCheckpoint = 4,
  NbedNumericFailure = 5,
  NbedShapeMismatch = 6,
  NbedIoFailure = 7,
  /**
   * A string argument was not valid UTF-8.
   */
  NbedInvalidUtf8 = 8,
  /**
   * The library panicked internally; state may be inconsistent.
   */
  NbedPanic = 9,
} NbedStatus;

/**
 * A loaded detector. Opaque; only valid through the `nbed_model_*` calls.
 */
typedef struct NbedModel NbedModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nbed_version(void);

/**
 * Message for the most recent error on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *nbed_last_error_message(void);

/**
 * Build a freshly initialized model from the default configuration.
 *
 * # Safety
 * `out` must point to writable storage for one pointer.
 */
enum NbedStatus nbed_model_new_default(uint64_t seed, struct NbedModel **out);

/**
 * Build a freshly initialized model from flat `model.* = value` text,
 * the same format the CLI config files use.
 *
 * # Safety
 * `config_text` must be a NUL-terminated string; `out` as above.
 */
enum NbedStatus nbed_model_from_config_text(const char *config_text, struct NbedModel **out);

/**
 * Load a trained model from a checkpoint file written by the trainer.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as above.
 */
enum NbedStatus nbed_model_from_checkpoint(const char *path, struct NbedModel **out);

/**
 * Number of trainable scalars in the model.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum NbedStatus nbed_model_parameter_count(const struct NbedModel *model, uintptr_t *out);

/**
 * Detect edges in one image.
 *
 * `image` holds `3 * height * width` doubles in CHW order, values in
 * [0, 1]. `edge_map` receives `height * width` probabilities, row-major.
 * Inputs of any size work; padding happens internally.
 *
 * # Safety
 * Both buffers must match the stated lengths; `model` must be live.
 */
enum NbedStatus nbed_model_forward(const struct NbedModel *model,
                                   const double *image,
                                   uintptr_t height,
                                   uintptr_t width,
                                   double *edge_map);

/**
 * Release a model handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must have come from an `nbed_model_*` constructor and must not
 * be used afterwards.
 */
void nbed_model_free(struct NbedModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NBED_H */
