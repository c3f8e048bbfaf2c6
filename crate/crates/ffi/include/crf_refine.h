#ifndef CRF_REFINE_H
#define CRF_REFINE_H

/* Generated by cbindgen from crf-refine-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a C API call.
typedef enum CrfStatus {
  CRF_STATUS_OK = 0,
  CRF_STATUS_NULL_POINTER = 1,
  CRF_STATUS_INVALID_ARGUMENT = 2,
  CRF_STATUS_SHAPE_MISMATCH = 3,
  CRF_STATUS_IO_ERROR = 4,
  CRF_STATUS_FORMAT_ERROR = 5,
  CRF_STATUS_PANIC = 6,
} CrfStatus;

// Opaque 8-bit RGB image.
typedef struct CrfImage CrfImage;

// Opaque per-pixel label map.
typedef struct CrfLabelMap CrfLabelMap;

// Opaque real-valued H x W x C tensor.
typedef struct CrfTensor CrfTensor;

// The five pairwise-kernel hyperparameters.
typedef struct CrfKernelParams {
  float w1;
  float w2;
  float sigma_alpha;
  float sigma_beta;
  float sigma_gamma;
} CrfKernelParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing this thread's most recent failure. The pointer stays
// valid until the next failing call on the same thread.
const char *crf_last_error(void);

// Library version as a static string.
const char *crf_version(void);

// Creates a tensor from a dense row-major, channel-minor float buffer of
// length `height * width * channels`.
//
// # Safety
// `data` must point to `height * width * channels` readable floats and
// `out` to a writable pointer slot.
enum CrfStatus crf_tensor_create(uint32_t height,
                                 uint32_t width,
                                 uint32_t channels,
                                 const float *data,
                                 struct CrfTensor **out);

// # Safety
// `path` must be NUL-terminated; `out` writable.
enum CrfStatus crf_tensor_load(const char *path, struct CrfTensor **out);

// # Safety
// `tensor` must be a live handle; `path` NUL-terminated.
enum CrfStatus crf_tensor_save(const struct CrfTensor *tensor, const char *path);

// # Safety
// All pointers must be valid; dimension slots are written on success.
enum CrfStatus crf_tensor_dims(const struct CrfTensor *tensor,
                               uint32_t *height,
                               uint32_t *width,
                               uint32_t *channels);

// Borrowed pointer to the tensor's `H * W * C` floats; NULL for a NULL
// handle. Valid while the handle lives.
//
// # Safety
// `tensor` must be a live handle or NULL.
const float *crf_tensor_data(const struct CrfTensor *tensor);

// Bilinear upsampling by an integer factor (half-pixel-center alignment).
//
// # Safety
// `tensor` must be a live handle; `out` writable.
enum CrfStatus crf_tensor_upsample(const struct CrfTensor *tensor,
                                   uint32_t factor,
                                   struct CrfTensor **out);

// # Safety
// `tensor` must come from this library and not be freed twice.
void crf_tensor_free(struct CrfTensor *tensor);

// Creates an image from `height * width * 3` interleaved RGB bytes.
//
// # Safety
// `rgb` must point to that many readable bytes; `out` writable.
enum CrfStatus crf_image_create(uint32_t height,
                                uint32_t width,
                                const uint8_t *rgb,
                                struct CrfImage **out);

// Loads a binary PPM (P6, maxval 255).
//
// # Safety
// `path` must be NUL-terminated; `out` writable.
enum CrfStatus crf_image_load(const char *path, struct CrfImage **out);

// # Safety
// `image` must come from this library and not be freed twice.
void crf_image_free(struct CrfImage *image);

// Loads a binary PGM (P5, maxval 255); 255 is the void label.
//
// # Safety
// `path` must be NUL-terminated; `out` writable.
enum CrfStatus crf_labelmap_load(const char *path, struct CrfLabelMap **out);

// # Safety
// `labels` must be a live handle; `path` NUL-terminated.
enum CrfStatus crf_labelmap_save(const struct CrfLabelMap *labels, const char *path);

// # Safety
// All pointers must be valid; dimension slots are written on success.
enum CrfStatus crf_labelmap_dims(const struct CrfLabelMap *labels,
                                 uint32_t *height,
                                 uint32_t *width);

// Borrowed pointer to the `H * W` row-major labels; NULL for a NULL
// handle. Valid while the handle lives.
//
// # Safety
// `labels` must be a live handle or NULL.
const uint16_t *crf_labelmap_data(const struct CrfLabelMap *labels);

// # Safety
// `labels` must come from this library and not be freed twice.
void crf_labelmap_free(struct CrfLabelMap *labels);

// Runs mean-field CRF inference on score maps already at image
// resolution (use [`crf_tensor_upsample`] first for coarse maps). Writes
// the argmax labeling to `out_labels` and, when `out_marginals` is not
// NULL, the final per-pixel marginals.
//
// # Safety
// `scores`, `image` and `params` must be live; `out_labels` writable;
// `out_marginals` writable or NULL.
enum CrfStatus crf_refine(const struct CrfTensor *scores,
                          const struct CrfImage *image,
                          const struct CrfKernelParams *params,
                          uint32_t iterations,
                          struct CrfLabelMap **out_labels,
                          struct CrfTensor **out_marginals);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRF_REFINE_H */
