#ifndef LINEWEAVE_H
#define LINEWEAVE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum LwStatus {
  LW_STATUS_OK = 0,
  LW_STATUS_NULL_ARGUMENT = 1,
  LW_STATUS_INVALID_ARGUMENT = 2,
  LW_STATUS_IO = 3,
  LW_STATUS_IMAGE = 4,
  LW_STATUS_CONFIG = 5,
  LW_STATUS_CHECKPOINT = 6,
  LW_STATUS_BUFFER_TOO_SMALL = 7,
  LW_STATUS_INTERNAL = 8,
} LwStatus;

// A trained network plus the run configuration used to segment with it.
typedef struct LwModel LwModel;

// One segmented page.
typedef struct LwSegmentation LwSegmentation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next lineweave call on the same thread.
const char *lw_last_error(void);

// Library version as a static NUL-terminated string.
const char *lw_version(void);

// Load a checkpoint. `config_path` may be null for built-in defaults; its
// patch size must match the checkpoint.
//
// # Safety
// Paths must be null or NUL-terminated; `out` must be writable.
enum LwStatus lw_model_load(const char *checkpoint_path,
                            const char *config_path,
                            struct LwModel **out);

// # Safety
// `model` must come from [`lw_model_load`] or be null.
void lw_model_free(struct LwModel *model);

// Patch side the model was trained with.
//
// # Safety
// `model` must be a live handle or null.
enum LwStatus lw_model_patch_size(const struct LwModel *model, size_t *out);

// Segment the page image at `image_path` (PNG, JPEG or TIFF).
//
// # Safety
// `model` must be a live handle; `image_path` NUL-terminated; `out` writable.
enum LwStatus lw_segment_file(const struct LwModel *model,
                              const char *image_path,
                              struct LwSegmentation **out);

// Segment a row-major grayscale page, intensities in [0, 1] with ink dark.
//
// # Safety
// `pixels` must point to `height * width` floats; `out` must be writable.
enum LwStatus lw_segment_gray(const struct LwModel *model,
                              const float *pixels,
                              size_t height,
                              size_t width,
                              struct LwSegmentation **out);

// # Safety
// `seg` must come from a segment call or be null.
void lw_segmentation_free(struct LwSegmentation *seg);

// Page height and width of a segmentation.
//
// # Safety
// `seg` must be a live handle; outputs writable.
enum LwStatus lw_segmentation_dims(const struct LwSegmentation *seg, size_t *height, size_t *width);

// Number of text lines; labels run from 1 to this count.
//
// # Safety
// `seg` must be a live handle; `out` writable.
enum LwStatus lw_segmentation_line_count(const struct LwSegmentation *seg, uint32_t *out);

// Whether the page had no blob lines and all ink went to line 1.
//
// # Safety
// `seg` must be a live handle; `out` writable.
enum LwStatus lw_segmentation_fallback(const struct LwSegmentation *seg, bool *out);

// Copy the row-major label map (0 = background) into `buf`, which must hold
// `height * width` values.
//
// # Safety
// `buf` must point to `len` writable `u32`s.
enum LwStatus lw_segmentation_labels(const struct LwSegmentation *seg, uint32_t *buf, size_t len);

// Lines, pixel counts and outline polygons as JSON. Release with
// [`lw_string_free`].
//
// # Safety
// `seg` must be a live handle; `out` writable.
enum LwStatus lw_segmentation_to_json(const struct LwSegmentation *seg, char **out);

// # Safety
// `s` must come from this library or be null.
void lw_string_free(char *s);

// Line IU (at `theta`) and pixel IU of two row-major label maps.
//
// # Safety
// `pred` and `gt` must each point to `height * width` labels.
enum LwStatus lw_evaluate(const uint32_t *pred,
                          const uint32_t *gt,
                          size_t height,
                          size_t width,
                          double theta,
                          double *liu,
                          double *piu);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LINEWEAVE_H */
