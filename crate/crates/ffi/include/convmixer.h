#ifndef CONVMIXER_H
#define CONVMIXER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every exported call.
 */
typedef enum CmixStatus {
  CMIX_STATUS_OK = 0,
  CMIX_STATUS_NULL_POINTER = 1,
  CMIX_STATUS_INVALID_ARGUMENT = 2,
  CMIX_STATUS_SHAPE_MISMATCH = 3,
  CMIX_STATUS_IO = 4,
  CMIX_STATUS_CHECKPOINT = 5,
  CMIX_STATUS_NON_FINITE = 6,
  CMIX_STATUS_PANIC = 7,
} CmixStatus;

/**
 * A model plus the run configuration it is saved with.
 */
typedef struct CmixModel CmixModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *cmix_last_error(void);

/**
 * Crate version as a static NUL-terminated string.
 */
const char *cmix_version(void);

/**
 * Closed-form parameter count of a ConvMixer with the given shape.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `u64`.
 */
enum CmixStatus cmix_param_count(size_t hidden,
                                 size_t depth,
                                 size_t patch_size,
                                 size_t kernel_size,
                                 size_t in_channels,
                                 size_t num_classes,
                                 uint64_t *out);

/**
 * Builds a freshly initialized model with the default switches (GELU,
 * BatchNorm, depthwise residual).
 *
 * # Safety
 * `out` must be null or point to writable memory for one pointer. On
 * success `*out` owns a handle that must be released with
 * [`cmix_model_free`].
 */
enum CmixStatus cmix_model_new(size_t hidden,
                               size_t depth,
                               size_t patch_size,
                               size_t kernel_size,
                               size_t in_channels,
                               size_t num_classes,
                               uint64_t seed,
                               struct CmixModel **out);

/**
 * Loads the model stored in a checkpoint file.
 *
 * # Safety
 * `path` must be null or a NUL-terminated string; `out` as for
 * [`cmix_model_new`].
 */
enum CmixStatus cmix_model_load(const char *path, struct CmixModel **out);

/**
 * Writes the model to a checkpoint file without optimizer state.
 *
 * # Safety
 * `model` must be null or a live handle; `path` must be null or a
 * NUL-terminated string.
 */
enum CmixStatus cmix_model_save(const struct CmixModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cmix_model_free(struct CmixModel *model);

/**
 * Total number of trainable scalars.
 *
 * # Safety
 * `model` must be null or a live handle; `out` must be null or writable.
 */
enum CmixStatus cmix_model_num_parameters(const struct CmixModel *model, uint64_t *out);

/**
 * Number of output classes, i.e. logits per image.
 *
 * # Safety
 * `model` must be null or a live handle; `out` must be null or writable.
 */
enum CmixStatus cmix_model_num_classes(const struct CmixModel *model, size_t *out);

/**
 * Eval-mode forward pass on a `batch×channels×height×width` f32 buffer,
 * already normalized. Writes `batch × num_classes` logits.
 *
 * # Safety
 * `input` must point to `batch·channels·height·width` readable floats and
 * `logits` to `logits_len` writable floats.
 */
enum CmixStatus cmix_model_predict(const struct CmixModel *model,
                                   const float *input,
                                   size_t batch,
                                   size_t channels,
                                   size_t height,
                                   size_t width,
                                   float *logits,
                                   size_t logits_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVMIXER_H */
