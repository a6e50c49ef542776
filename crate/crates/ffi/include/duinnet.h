#ifndef DUINNET_H
#define DUINNET_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. The non-zero values of configuration, data and numeric
 * failures match the exit codes of the `duinnet` binary.
 */
typedef enum DnStatus {
  DN_STATUS_OK = 0,
  /**
   * A required pointer was null or a buffer was too small.
   */
  DN_STATUS_NULL_OR_SHORT_BUFFER = 1,
  /**
   * Invalid argument, configuration or checkpoint mismatch.
   */
  DN_STATUS_CONFIG = 2,
  /**
   * Input data, geometry or I/O failure.
   */
  DN_STATUS_DATA = 3,
  DN_STATUS_NUMERIC = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  DN_STATUS_INTERNAL = 5,
} DnStatus;

/**
 * First-sample rule for farthest point sampling.
 */
typedef enum DnSeedRule {
  DN_SEED_RULE_FIRST_INDEX = 0,
  DN_SEED_RULE_FARTHEST_FROM_CENTROID = 1,
} DnSeedRule;

typedef enum DnProfile {
  DN_PROFILE_MINI = 0,
  DN_PROFILE_PAPER = 1,
} DnProfile;

typedef enum DnTask {
  DN_TASK_SUPERVISED = 0,
  DN_TASK_DENOISING = 1,
  DN_TASK_ZEROSHOT = 2,
} DnTask;

/**
 * Opaque point cloud.
 */
typedef struct DnCloud DnCloud;

/**
 * Opaque network with its parameters.
 */
typedef struct DnModel DnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *dn_last_error(void);

/**
 * Builds a cloud from `n` packed points. Non-finite coordinates are
 * rejected.
 *
 * # Safety
 * `xyz` must point to `3 * n` doubles; `out` must be writable.
 */
enum DnStatus dn_cloud_new(const double *xyz, size_t n, struct DnCloud **out);

/**
 * # Safety
 * `cloud` must come from this library and not be used afterwards.
 */
void dn_cloud_free(struct DnCloud *cloud);

/**
 * Number of points, 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t dn_cloud_len(const struct DnCloud *cloud);

/**
 * Copies the points into `xyz`, which holds `cap` doubles.
 *
 * # Safety
 * `cloud` must be live; `xyz` must be writable for `cap` doubles.
 */
enum DnStatus dn_cloud_points(const struct DnCloud *cloud, double *xyz, size_t cap);

/**
 * Symmetric Chamfer distance on Euclidean nearest-neighbour distances.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum DnStatus dn_chamfer_l1(const struct DnCloud *a, const struct DnCloud *b, double *out);

/**
 * Chamfer distance on squared nearest-neighbour distances.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum DnStatus dn_chamfer_l2(const struct DnCloud *a, const struct DnCloud *b, double *out);

/**
 * F-Score of `pred` against `gt` at threshold `d` (compared with squared
 * distances). Precision and recall are written when their pointers are
 * non-null.
 *
 * # Safety
 * Handles must be live; `f` writable; `precision` and `recall` null or
 * writable.
 */
enum DnStatus dn_fscore(const struct DnCloud *pred,
                        const struct DnCloud *gt,
                        double d,
                        double *f,
                        double *precision,
                        double *recall);

/**
 * Farthest point sampling: writes `m` indices in selection order.
 *
 * # Safety
 * `cloud` must be live; `indices` writable for `m` entries.
 */
enum DnStatus dn_fps(const struct DnCloud *cloud, size_t m, enum DnSeedRule rule, size_t *indices);

/**
 * Hidden point removal from `viewpoint` (3 doubles). Writes the sorted
 * visible indices to `indices`, which must hold `dn_cloud_len(cloud)`
 * entries, and their number to `count`.
 *
 * # Safety
 * `cloud` must be live; `viewpoint` readable for 3 doubles; `indices` and
 * `count` writable.
 */
enum DnStatus dn_hpr(const struct DnCloud *cloud,
                     const double *viewpoint,
                     double radius_exponent,
                     size_t *indices,
                     size_t *count);

/**
 * Fresh network with seeded parameters.
 *
 * # Safety
 * `out` must be writable.
 */
enum DnStatus dn_model_new(enum DnProfile profile,
                           enum DnTask task,
                           uint64_t seed,
                           struct DnModel **out);

/**
 * Loads a trained network from a run directory or checkpoint file. The
 * dimensions recorded by the run take precedence over `profile`/`task`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` writable.
 */
enum DnStatus dn_model_load(const char *path,
                            enum DnProfile profile,
                            enum DnTask task,
                            struct DnModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void dn_model_free(struct DnModel *model);

/**
 * Points produced by the network, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or live.
 */
size_t dn_model_points(const struct DnModel *model);

/**
 * Side length of the square input image, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or live.
 */
size_t dn_model_image_side(const struct DnModel *model);

/**
 * Completes `partial` given a `side x side x 3` row-major image with
 * values in `[0, 1]`, where `side` is [`dn_model_image_side`]. The partial
 * cloud is resampled to the network input size with `seed`.
 *
 * # Safety
 * Handles must be live; `image` readable for `3 * side * side` floats;
 * `out` writable.
 */
enum DnStatus dn_model_complete(const struct DnModel *model,
                                const struct DnCloud *partial,
                                const float *image,
                                uint64_t seed,
                                struct DnCloud **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DUINNET_H */
