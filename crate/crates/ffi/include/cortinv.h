#ifndef CORTINV_H
#define CORTINV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum CortinvStatus {
  CORTINV_STATUS_OK = 0,
  CORTINV_STATUS_NULL_POINTER = 1,
  CORTINV_STATUS_INVALID_ARGUMENT = 2,
  CORTINV_STATUS_IO = 3,
  CORTINV_STATUS_DATA = 4,
  CORTINV_STATUS_PROVENANCE = 5,
  CORTINV_STATUS_UNDEFINED_CORRELATION = 6,
  CORTINV_STATUS_PANIC = 7,
} CortinvStatus;

/**
 * Trained regressor, optionally with its feature pipeline and smoother.
 */
typedef struct CortinvModel CortinvModel;

/**
 * Tract-variable trajectory, row-major with 6 values per 10 ms frame.
 */
typedef struct CortinvTrajectory CortinvTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *cortinv_last_error(void);

/**
 * Pearson correlation of two length-`n` sequences.
 *
 * # Safety
 * `estimate` and `truth` must point to `n` doubles; `out` to one.
 */
enum CortinvStatus cortinv_ppmc(const double *estimate, const double *truth, size_t n, double *out);

/**
 * Constant-velocity Kalman smoothing of a `n_frames × 6` trajectory with
 * the same process (`q`) and observation (`r`) noise on every channel.
 * A nonzero `forward_only` skips the backward pass.
 *
 * # Safety
 * `values` and `out` must each hold `6 * n_frames` doubles. They may alias.
 */
enum CortinvStatus cortinv_kalman_smooth(const double *values,
                                         size_t n_frames,
                                         double q,
                                         double r,
                                         int32_t forward_only,
                                         double *out);

/**
 * Loads a bare checkpoint. The model maps precomputed feature rows to tract
 * variables with [`cortinv_model_predict`].
 *
 * # Safety
 * `checkpoint` must be a NUL-terminated path; `out` must be writable.
 */
enum CortinvStatus cortinv_model_load_checkpoint(const char *checkpoint, struct CortinvModel **out);

/**
 * Loads a checkpoint together with the basis and smoother of the experiment
 * described by `config` (a TOML file), enabling [`cortinv_model_invert`].
 *
 * # Safety
 * Both paths must be NUL-terminated; `out` must be writable.
 */
enum CortinvStatus cortinv_model_load(const char *config,
                                      const char *checkpoint,
                                      struct CortinvModel **out);

/**
 * Width of one feature row expected by [`cortinv_model_predict`], or 0 for
 * a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t cortinv_model_input_dim(const struct CortinvModel *model);

/**
 * Network output (no smoothing) for `n_frames` feature rows.
 *
 * # Safety
 * `features` must hold `n_frames * input_dim` doubles and `out`
 * `6 * n_frames`.
 */
enum CortinvStatus cortinv_model_predict(const struct CortinvModel *model,
                                         const double *features,
                                         size_t n_frames,
                                         double *out);

/**
 * Full inversion of mono audio: features, regression and smoothing. Needs a
 * model from [`cortinv_model_load`].
 *
 * # Safety
 * `samples` must hold `n_samples` doubles; `out` must be writable.
 */
enum CortinvStatus cortinv_model_invert(const struct CortinvModel *model,
                                        const double *samples,
                                        size_t n_samples,
                                        uint32_t sample_rate,
                                        struct CortinvTrajectory **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cortinv_model_free(struct CortinvModel *model);

/**
 * Number of frames, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t cortinv_trajectory_frames(const struct CortinvTrajectory *traj);

/**
 * Row-major values (`6 * frames`), owned by the handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
const double *cortinv_trajectory_data(const struct CortinvTrajectory *traj);

/**
 * # Safety
 * `traj` must be null or a handle not yet freed.
 */
void cortinv_trajectory_free(struct CortinvTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORTINV_H */
