#ifndef PHASEMATCH_H
#define PHASEMATCH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_FILE_NOT_FOUND = 3,
  PM_STATUS_IO = 4,
  PM_STATUS_BAD_FORMAT = 5,
  PM_STATUS_SHAPE_MISMATCH = 6,
  PM_STATUS_NO_KEYPOINTS = 7,
  PM_STATUS_NO_CONSENSUS = 8,
  PM_STATUS_OUT_OF_RANGE = 9,
  PM_STATUS_PANIC = 10,
  PM_STATUS_INTERNAL = 11,
} PmStatus;

typedef struct PmImage PmImage;

typedef struct PmKeypoints PmKeypoints;

typedef struct PmMatchResult PmMatchResult;

typedef struct PmModel PmModel;

typedef struct PmDetectOptions {
  uint32_t nms_radius;
  /**
   * Keep maxima above mean + k * stddev of the moment map.
   */
  double threshold_k;
  uint32_t max_keypoints;
  uint32_t border;
  /**
   * Non-zero enables the noise threshold.
   */
  uint8_t noise_compensation;
} PmDetectOptions;

typedef struct PmMatchOptions {
  struct PmDetectOptions detect;
  double score_threshold;
  /**
   * Chebyshev gate in pixels; zero or negative scores every pair.
   */
  double search_radius;
  uint8_t mutual_best;
  /**
   * 0 = translation, 1 = similarity.
   */
  uint8_t geometry;
  uint32_t iterations;
  double tolerance;
  uint32_t min_inliers;
  uint64_t seed;
} PmMatchOptions;

typedef struct PmKeypoint {
  uint32_t x;
  uint32_t y;
  double strength;
  /**
   * 0 = corner, 1 = edge.
   */
  uint8_t kind;
} PmKeypoint;

typedef struct PmMatch {
  uint32_t ax;
  uint32_t ay;
  uint32_t bx;
  uint32_t by;
  double score;
  uint8_t inlier;
} PmMatch;

/**
 * `b = scale * R(rotation) * a + (tx, ty)`.
 */
typedef struct PmTransform {
  double scale;
  double rotation;
  double tx;
  double ty;
} PmTransform;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pm_version(void);

/**
 * Loads an 8- or 16-bit grayscale PGM/PNG into `[0, 1]` values.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PmStatus pm_image_load(const char *path, struct PmImage **out);

/**
 * Copies `width * height` row-major values in `[0, 1]`.
 *
 * # Safety
 * `pixels` must point to `width * height` doubles; `out` must be writable.
 */
enum PmStatus pm_image_from_pixels(uint32_t width,
                                   uint32_t height,
                                   const double *pixels,
                                   struct PmImage **out);

/**
 * # Safety
 * `img` must be null or a live handle.
 */
uint32_t pm_image_width(const struct PmImage *img);

/**
 * # Safety
 * `img` must be null or a live handle.
 */
uint32_t pm_image_height(const struct PmImage *img);

/**
 * # Safety
 * `img` must be null or a handle not yet freed.
 */
void pm_image_free(struct PmImage *img);

/**
 * Loads a trained model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PmStatus pm_model_load(const char *path, struct PmModel **out);

/**
 * Side length of the square patches the model expects; 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t pm_model_patch_size(const struct PmModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pm_model_free(struct PmModel *model);

/**
 * Fills `opts` with the library defaults.
 *
 * # Safety
 * `opts` must be writable.
 */
enum PmStatus pm_detect_options_default(struct PmDetectOptions *opts);

/**
 * Fills `opts` with the library defaults.
 *
 * # Safety
 * `opts` must be writable.
 */
enum PmStatus pm_match_options_default(struct PmMatchOptions *opts);

/**
 * Detects phase-congruency corners.
 *
 * # Safety
 * `img` must be a live handle, `opts` null (defaults) or readable, and
 * `out` writable.
 */
enum PmStatus pm_detect_keypoints(const struct PmImage *img,
                                  const struct PmDetectOptions *opts,
                                  struct PmKeypoints **out);

/**
 * # Safety
 * `kps` must be null or a live handle.
 */
size_t pm_keypoints_len(const struct PmKeypoints *kps);

/**
 * # Safety
 * `kps` must be a live handle and `out` writable.
 */
enum PmStatus pm_keypoints_get(const struct PmKeypoints *kps, size_t index, struct PmKeypoint *out);

/**
 * # Safety
 * `kps` must be null or a handle not yet freed.
 */
void pm_keypoints_free(struct PmKeypoints *kps);

/**
 * Matches two images with a trained model.
 *
 * # Safety
 * Handles must be live, `opts` null (defaults) or readable, `out` writable.
 */
enum PmStatus pm_match(const struct PmImage *a,
                       const struct PmImage *b,
                       const struct PmModel *model,
                       const struct PmMatchOptions *opts,
                       struct PmMatchResult **out);

/**
 * Matches two images with normalized cross-correlation of
 * `patch_size`-pixel patches (16, 32 or 64).
 *
 * # Safety
 * Handles must be live, `opts` null (defaults) or readable, `out` writable.
 */
enum PmStatus pm_match_ncc(const struct PmImage *a,
                           const struct PmImage *b,
                           uint32_t patch_size,
                           const struct PmMatchOptions *opts,
                           struct PmMatchResult **out);

/**
 * Number of accepted matches (inliers and outliers).
 *
 * # Safety
 * `r` must be null or a live handle.
 */
size_t pm_match_result_len(const struct PmMatchResult *r);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
size_t pm_match_result_inliers(const struct PmMatchResult *r);

/**
 * # Safety
 * `r` must be a live handle and `out` writable.
 */
enum PmStatus pm_match_result_get(const struct PmMatchResult *r, size_t index, struct PmMatch *out);

/**
 * # Safety
 * `r` must be a live handle and `out` writable.
 */
enum PmStatus pm_match_result_transform(const struct PmMatchResult *r, struct PmTransform *out);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void pm_match_result_free(struct PmMatchResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHASEMATCH_H */
