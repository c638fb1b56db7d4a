#ifndef EGS_H
#define EGS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EgsStatus {
  EGS_STATUS_OK = 0,
  EGS_STATUS_NULL_POINTER = 1,
  EGS_STATUS_INVALID_ARGUMENT = 2,
  EGS_STATUS_IO = 3,
  EGS_STATUS_PARSE = 4,
  EGS_STATUS_DIVERGED = 5,
  EGS_STATUS_INTERNAL = 6,
} EgsStatus;

/**
 * Views, ground-truth images and initial points.
 */
typedef struct EgsDataset EgsDataset;

/**
 * A list of Gaussians.
 */
typedef struct EgsModel EgsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next `egs_*` call on the same thread.
 */
const char *egs_last_error(void);

/**
 * Loads a PLY model or an EGS1 checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EgsStatus egs_model_load(const char *path, struct EgsModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void egs_model_free(struct EgsModel *model);

/**
 * Number of Gaussians (0 for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t egs_model_count(const struct EgsModel *model);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum EgsStatus egs_model_save_ply(const struct EgsModel *model, const char *path);

/**
 * Loads a COLMAP text dataset directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum EgsStatus egs_dataset_load_colmap(const char *dir, struct EgsDataset **out);

/**
 * Generates a synthetic dataset from a TOML scene spec (null: defaults).
 *
 * # Safety
 * `spec_toml` must be null or NUL-terminated; `out` must be writable.
 */
enum EgsStatus egs_dataset_synthetic(const char *spec_toml, struct EgsDataset **out);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void egs_dataset_free(struct EgsDataset *dataset);

/**
 * Number of views (0 for a null handle).
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t egs_dataset_view_count(const struct EgsDataset *dataset);

/**
 * Image size of one view.
 *
 * # Safety
 * `dataset` must be a live handle; `width` and `height` writable.
 */
enum EgsStatus egs_dataset_view_size(const struct EgsDataset *dataset,
                                     size_t view,
                                     uint32_t *width,
                                     uint32_t *height);

/**
 * Renders `view` over a black background into `rgb` (row-major, 3 floats
 * per pixel in [0, 1]); `len` must equal width * height * 3.
 *
 * # Safety
 * Handles must be live; `rgb` must point to `len` writable floats.
 */
enum EgsStatus egs_render(const struct EgsModel *model,
                          const struct EgsDataset *dataset,
                          size_t view,
                          float *rgb,
                          size_t len);

/**
 * Trains a model on `dataset`. `config_toml` may be null for defaults.
 *
 * # Safety
 * `dataset` must be live, `config_toml` null or NUL-terminated, `out` writable.
 */
enum EgsStatus egs_train(const struct EgsDataset *dataset,
                         const char *config_toml,
                         struct EgsModel **out);

/**
 * Keeps only Gaussians ranked in the top `k` blend weights at some pixel
 * of some training view. Writes the number removed to `removed` if non-null.
 *
 * # Safety
 * Handles must be live; `removed` null or writable.
 */
enum EgsStatus egs_prune(struct EgsModel *model,
                         const struct EgsDataset *dataset,
                         size_t k,
                         size_t *removed);

/**
 * Mean PSNR (dB, capped at 100) and SSIM over the held-out views.
 *
 * # Safety
 * Handles must be live; `psnr_out` and `ssim_out` writable.
 */
enum EgsStatus egs_evaluate(const struct EgsModel *model,
                            const struct EgsDataset *dataset,
                            double *psnr_out,
                            double *ssim_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EGS_H */
