#ifndef CEDO_H
#define CEDO_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CedoStatus {
  CEDO_STATUS_OK = 0,
  CEDO_STATUS_INVALID_ARGUMENT = 1,
  CEDO_STATUS_SHAPE = 2,
  CEDO_STATUS_STATE = 3,
  CEDO_STATUS_NUMERIC = 4,
  CEDO_STATUS_DEGENERATE = 5,
  CEDO_STATUS_PARSE = 6,
  CEDO_STATUS_CONFIG = 7,
  CEDO_STATUS_IO = 8,
  CEDO_STATUS_DIVERGENCE = 9,
  CEDO_STATUS_NULL_POINTER = 10,
  CEDO_STATUS_PANIC = 11,
} CedoStatus;

/**
 * Orthogonalization mode for [`cedo_orthogonalize`].
 */
typedef enum CedoOrthoMode {
  CEDO_ORTHO_MODE_ORTHOGONAL = 0,
  CEDO_ORTHO_MODE_LITERAL = 1,
} CedoOrthoMode;

/**
 * Opaque model handle.
 */
typedef struct CedoModel CedoModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread. Empty after a success.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *cedo_last_error_message(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void cedo_string_free(char *s);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles; `out_value` must be writable.
 */
enum CedoStatus cedo_cosine(const double *a, const double *b, size_t len, double *out_value);

/**
 * Minimum-norm point of the convex hull of three gradients of length `dim`.
 * Writes the simplex weights `(α_t, α_q, α_v)` to `out_alpha`, the combined
 * vector to `out_combined` (may be null) and its norm to `out_min_norm`.
 *
 * # Safety
 * Input pointers must reference `dim` doubles, `out_alpha` three doubles and
 * `out_combined` (when non-null) `dim` doubles.
 */
enum CedoStatus cedo_pareto_min_norm(const double *g_t,
                                     const double *g_q,
                                     const double *g_v,
                                     size_t dim,
                                     double *out_alpha,
                                     double *out_combined,
                                     double *out_min_norm,
                                     bool *out_stationary);

/**
 * Projection surgery: t and v against q, q against v. With `conflict_only`
 * a gradient is changed only when its cosine with the reference is negative.
 *
 * # Safety
 * Every pointer must reference `dim` doubles.
 */
enum CedoStatus cedo_orthogonalize(const double *g_t,
                                   const double *g_q,
                                   const double *g_v,
                                   size_t dim,
                                   enum CedoOrthoMode mode,
                                   bool conflict_only,
                                   double *out_t,
                                   double *out_q,
                                   double *out_v);

/**
 * Rescaling weight for an answer seen `count_m` times among the `count_big_m`
 * samples of its question type: `w = 1/(M·m)` and `W = ln(1 + e^w)`.
 *
 * # Safety
 * `out_w` and `out_weight` must be writable.
 */
enum CedoStatus cedo_dlr_weight(size_t count_m,
                                size_t count_big_m,
                                double *out_w,
                                double *out_weight);

/**
 * Weighted supervised-contrastive loss over `n` row-major features of length
 * `dim` with per-anchor weights. `out_grads` (n×dim, may be null) receives the
 * gradient with respect to the features.
 *
 * # Safety
 * `features` must reference `n·dim` doubles, `answers` and `anchor_weights` `n`
 * entries, and `out_grads` (when non-null) `n·dim` doubles.
 */
enum CedoStatus cedo_weighted_supcon(const double *features,
                                     size_t n,
                                     size_t dim,
                                     const size_t *answers,
                                     const double *anchor_weights,
                                     double temperature,
                                     bool normalize,
                                     double *out_value,
                                     double *out_grads);

/**
 * Creates a Glorot-initialised model.
 *
 * # Safety
 * `out_model` must be writable. The handle must be released with [`cedo_model_free`].
 */
enum CedoStatus cedo_model_new(size_t question_dim,
                               size_t image_dim,
                               size_t hidden_dim,
                               size_t fused_dim,
                               size_t num_answers,
                               uint64_t seed,
                               struct CedoModel **out_model);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not have been freed already.
 */
void cedo_model_free(struct CedoModel *model);

/**
 * Total trainable parameter count.
 *
 * # Safety
 * `model` must be a live handle and `out_count` writable.
 */
enum CedoStatus cedo_model_num_params(const struct CedoModel *model, size_t *out_count);

/**
 * Forward pass for one sample. Each logits buffer holds `num_answers` doubles
 * and may be null to skip that head.
 *
 * # Safety
 * `model` must be a live handle; input and output buffers must match the model dims.
 */
enum CedoStatus cedo_model_forward(const struct CedoModel *model,
                                   const double *question,
                                   const double *image,
                                   double *out_joint,
                                   double *out_question,
                                   double *out_image);

/**
 * Writes the model to a JSON checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum CedoStatus cedo_model_save(const struct CedoModel *model, const char *path);

/**
 * Loads a checkpoint written by [`cedo_model_save`] or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out_model` writable.
 */
enum CedoStatus cedo_model_load(const char *path, struct CedoModel **out_model);

/**
 * Runs a full training job from a JSON config (same schema as the CLI's
 * `--config`) and returns the metrics as a JSON string in `out_metrics_json`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated UTF-8 string and `out_metrics_json`
 * writable. Release the result with [`cedo_string_free`].
 */
enum CedoStatus cedo_train_json(const char *config_json, char **out_metrics_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CEDO_H */
