/* C interface for the fingercascade detection pipeline. */

#ifndef FINGERCASCADE_H
#define FINGERCASCADE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible call. `fc_status_message` renders them.
 */
typedef enum {
  /**
   * The call succeeded.
   */
  FC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FC_STATUS_NULL_ARGUMENT = 1,
  /**
   * The models directory path was not valid UTF-8.
   */
  FC_STATUS_INVALID_PATH = 2,
  /**
   * A weights file or the descriptor is missing from the directory.
   */
  FC_STATUS_MISSING_MODEL = 3,
  /**
   * The directory contents failed validation or deserialization.
   */
  FC_STATUS_CORRUPT_MODEL = 4,
  /**
   * Image dimensions were zero or overflowed the buffer size.
   */
  FC_STATUS_INVALID_IMAGE = 5,
  /**
   * The cascade itself failed on this frame.
   */
  FC_STATUS_DETECT_FAILED = 6,
  /**
   * A panic was caught at the ABI boundary; indicates a library bug.
   */
  FC_STATUS_INTERNAL = 7,
} FcStatus;

/**
 * Opaque handle over a loaded model set.
 */
typedef struct FcModels FcModels;

/**
 * One detection, every coordinate in pixels of the input frame.
 */
typedef struct {
  /**
   * Hand box corners, ordered so x1 <= x2 and y1 <= y2.
   */
  double hand_x1;
  double hand_y1;
  double hand_x2;
  double hand_y2;
  double fingertip_x;
  double fingertip_y;
  /**
   * Index finger joint; always produced by the two-keypoint regressor.
   */
  double joint_x;
  double joint_y;
  /**
   * Wall time of the hand-net forward passes.
   */
  double hand_ms;
  /**
   * Wall time of the finger-net forward pass.
   */
  double finger_ms;
  /**
   * Resampling, centralization, cropping, and coordinate mapping.
   */
  double processing_ms;
  double total_ms;
  /**
   * True when a degenerate hand regression needed repair.
   */
  bool hand_repaired;
} FcDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a models directory produced by the trainer (four weight files plus
 * a JSON descriptor) and writes a fresh handle to `out`.
 *
 * On any status other than `FC_STATUS_OK`, `*out` is left untouched. The
 * handle must be released with [`fc_models_free`].
 *
 * # Safety
 * `dir` must point to a nul-terminated string and `out` to a writable
 * `FcModels*` slot, both valid for the duration of the call.
 */
FcStatus fc_models_load(const char *dir, FcModels **out);

/**
 * Releases a handle returned by [`fc_models_load`]. A null pointer is a
 * no-op.
 *
 * # Safety
 * `models` must be null or a handle from [`fc_models_load`] that has not
 * been freed yet, with no detection calls still running on it.
 */
void fc_models_free(FcModels *models);

/**
 * Runs the full cascade on one frame of tightly packed interleaved 8-bit
 * RGB (`3 * width * height` bytes, no row padding) and fills `out`.
 *
 * On any status other than `FC_STATUS_OK`, `*out` is left untouched.
 *
 * # Safety
 * `models` must be a live handle from [`fc_models_load`], `rgb` must point
 * to `3 * width * height` readable bytes, and `out` to a writable
 * `FcDetection`, all valid for the duration of the call.
 */
FcStatus fc_detect_rgb8(const FcModels *models,
                        const uint8_t *rgb,
                        uint32_t width,
                        uint32_t height,
                        FcDetection *out);

/**
 * Static description of a status code; never null.
 */
const char *fc_status_message(FcStatus status);

/**
 * Library version as a static nul-terminated string.
 */
const char *fc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FINGERCASCADE_H */
