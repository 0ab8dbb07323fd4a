#ifndef NMFX_H
#define NMFX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2–4 match the CLI exit codes.
 */
typedef enum {
  NMFX_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NMFX_STATUS_NULL_POINTER = 1,
  /**
   * Malformed input, bad shape or invalid configuration.
   */
  NMFX_STATUS_INVALID_INPUT = 2,
  /**
   * The factorization diverged or NNLS exhausted its budget.
   */
  NMFX_STATUS_SOLVER_FAILURE = 3,
  /**
   * A file could not be read or written.
   */
  NMFX_STATUS_IO = 4,
  /**
   * A caller-provided output buffer has the wrong length.
   */
  NMFX_STATUS_BUFFER_SIZE = 5,
  /**
   * An internal panic was caught at the boundary.
   */
  NMFX_STATUS_PANIC = 6,
} NmfxStatus;

/**
 * Opaque feature tensor `(n, p, d1, d2)`.
 */
typedef struct NmfxFeatures NmfxFeatures;

/**
 * Opaque fitted model together with the grid it was fitted on.
 */
typedef struct NmfxModel NmfxModel;

/**
 * Factorization settings; obtain defaults from [`nmfx_config_default`].
 */
typedef struct {
  size_t k;
  size_t max_iters;
  double rel_tol;
  uint64_t seed;
  double eps;
} NmfxConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nmfx_version(void);

/**
 * Message of the last failing call on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *nmfx_last_error(void);

/**
 * Default settings for `k` topics: 500 iterations, relative tolerance
 * 1e-6, seed 0, denominator guard 1e-12.
 */
NmfxConfig nmfx_config_default(size_t k);

/**
 * Copies a row-major `(n, p, d1, d2)` buffer into a new feature handle.
 *
 * # Safety
 * `data` must point to `n * p * d1 * d2` readable doubles and `out` must be
 * a valid pointer to write the handle to.
 */
NmfxStatus nmfx_features_from_buffer(const double *data,
                                     size_t n,
                                     size_t p,
                                     size_t d1,
                                     size_t d2,
                                     NmfxFeatures **out);

/**
 * Loads a `(n, p, d1, d2)` feature tensor from an .npy file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
NmfxStatus nmfx_features_load(const char *path, NmfxFeatures **out);

/**
 * Writes the four axis lengths `(n, p, d1, d2)` into `shape`.
 *
 * # Safety
 * `features` must be a live handle and `shape` must point to 4 writable
 * `size_t` values.
 */
NmfxStatus nmfx_features_shape(const NmfxFeatures *features, size_t *shape);

/**
 * Releases a feature handle; NULL is ignored.
 *
 * # Safety
 * `features` must be NULL or a handle not yet freed.
 */
void nmfx_features_free(NmfxFeatures *features);

/**
 * Fits unsupervised NMF.
 *
 * # Safety
 * `features` must be a live handle, `config` and `out` valid pointers.
 */
NmfxStatus nmfx_nmf_fit(const NmfxFeatures *features, const NmfxConfig *config, NmfxModel **out);

/**
 * Fits label-guided SSNMF. `labels` holds one class index in
 * `[0, classes)` per image, or -1 for an unlabeled image. Class names are
 * recorded as `class0`, `class1`, ...
 *
 * # Safety
 * `labels` must point to `n` readable values where `n` is the image count
 * of `features`; the other pointers as for [`nmfx_nmf_fit`].
 */
NmfxStatus nmfx_ssnmf_fit(const NmfxFeatures *features,
                          const int64_t *labels,
                          size_t classes,
                          double lambda,
                          const NmfxConfig *config,
                          NmfxModel **out);

/**
 * Number of topics.
 *
 * # Safety
 * `model` must be a live handle or NULL (returns 0).
 */
size_t nmfx_model_k(const NmfxModel *model);

/**
 * Number of feature channels `p`.
 *
 * # Safety
 * `model` must be a live handle or NULL (returns 0).
 */
size_t nmfx_model_channels(const NmfxModel *model);

/**
 * Number of spatial locations `N = n * d1 * d2` of the training grid.
 *
 * # Safety
 * `model` must be a live handle or NULL (returns 0).
 */
size_t nmfx_model_locations(const NmfxModel *model);

/**
 * Number of label classes (0 for an unsupervised model).
 *
 * # Safety
 * `model` must be a live handle or NULL (returns 0).
 */
size_t nmfx_model_classes(const NmfxModel *model);

/**
 * Iterations performed by the fit.
 *
 * # Safety
 * `model` must be a live handle or NULL (returns 0).
 */
size_t nmfx_model_iterations(const NmfxModel *model);

/**
 * Length of the objective trace (initial value plus one per iteration).
 *
 * # Safety
 * `model` must be a live handle or NULL (returns 0).
 */
size_t nmfx_model_trace_len(const NmfxModel *model);

/**
 * Copies the `(p, K)` topic matrix.
 *
 * # Safety
 * `model` must be a live handle; `buf` must point to `len` writable doubles.
 */
NmfxStatus nmfx_model_copy_topics(const NmfxModel *model, double *buf, size_t len);

/**
 * Copies the `(K, N)` weight matrix.
 *
 * # Safety
 * As for [`nmfx_model_copy_topics`].
 */
NmfxStatus nmfx_model_copy_weights(const NmfxModel *model, double *buf, size_t len);

/**
 * Copies the `(classes, K)` classifier matrix of an SSNMF model.
 *
 * # Safety
 * As for [`nmfx_model_copy_topics`].
 */
NmfxStatus nmfx_model_copy_classifier(const NmfxModel *model, double *buf, size_t len);

/**
 * Copies the objective trace.
 *
 * # Safety
 * As for [`nmfx_model_copy_topics`]; `len` must equal [`nmfx_model_trace_len`].
 */
NmfxStatus nmfx_model_copy_trace(const NmfxModel *model, double *buf, size_t len);

/**
 * Writes the model directory (A.npy, S.npy, optional B.npy, meta.json).
 *
 * # Safety
 * `model` must be a live handle and `dir` a NUL-terminated string.
 */
NmfxStatus nmfx_model_save(const NmfxModel *model, const char *dir);

/**
 * Loads a model directory written by [`nmfx_model_save`] or the CLI.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
NmfxStatus nmfx_model_load(const char *dir, NmfxModel **out);

/**
 * Releases a model handle; NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void nmfx_model_free(NmfxModel *model);

/**
 * Projects held-out features onto the model's frozen topics by NNLS and
 * writes the `(n, K, d1, d2)` heat tensor into `heat`.
 *
 * # Safety
 * `model` and `features` must be live handles; `heat` must point to `len`
 * writable doubles.
 */
NmfxStatus nmfx_project(const NmfxModel *model,
                        const NmfxFeatures *features,
                        double kkt_tol,
                        size_t max_iters,
                        double *heat,
                        size_t len);

/**
 * Normalizes each image's heat to a maximum of 1 and bilinearly upsamples
 * a row-major `(n, K, d1, d2)` tensor to `(n, K, height, width)`.
 *
 * # Safety
 * `heat` must point to `n * k * d1 * d2` readable doubles and `out` to
 * `len` writable doubles.
 */
NmfxStatus nmfx_heatmaps(const double *heat,
                         size_t n,
                         size_t k,
                         size_t d1,
                         size_t d2,
                         size_t height,
                         size_t width,
                         double *out,
                         size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NMFX_H */
