#ifndef ECGTUNE_H
#define ECGTUNE_H

/* Generated by cbindgen at build time; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EcgStatus {
  ECG_STATUS_OK = 0,
  ECG_STATUS_NULL_POINTER = 1,
  ECG_STATUS_INVALID_ARGUMENT = 2,
  ECG_STATUS_BUFFER_TOO_SMALL = 3,
  ECG_STATUS_SHAPE = 4,
  ECG_STATUS_CONFIG = 5,
  ECG_STATUS_DATA = 6,
  ECG_STATUS_NUMERICAL = 7,
  ECG_STATUS_STATE = 8,
  ECG_STATUS_TRAINING = 9,
  ECG_STATUS_IO = 10,
  ECG_STATUS_JSON = 11,
  ECG_STATUS_PANIC = 12,
} EcgStatus;

// Fitted Gaussian-process surrogate.
typedef struct EcgGp EcgGp;

// Trained network loaded from a `model.bin` file.
typedef struct EcgModel EcgModel;

typedef struct EcgHyperParams {
  double drop_rate;
  uint32_t dense_layers;
  uint32_t conv_layers;
  double learning_rate;
  double adam_decay;
} EcgHyperParams;

// Macro-averaged scores and accuracy, all in percent.
typedef struct EcgScores {
  double precision;
  double recall;
  double f1;
  double accuracy;
  // Nonzero when some class had an empty denominator (scored as 0).
  int32_t any_undefined;
} EcgScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or "" after a success.
// The pointer stays valid until the next call into this library.
const char *ecg_last_error(void);

// Bytes needed to pack `sample_count` samples in format 212.
size_t ecg_212_encoded_len(size_t sample_count);

// Unpacks `sample_count` 12-bit samples from `bytes` into `samples`.
//
// # Safety
// `bytes` must hold `byte_len` bytes and `samples` room for `sample_count`.
enum EcgStatus ecg_212_decode(const uint8_t *bytes,
                              size_t byte_len,
                              size_t sample_count,
                              int16_t *samples);

// Packs samples in [-2048, 2047]. `*written` receives the number of bytes
// needed; if `capacity` is smaller nothing is written and
// `ECG_STATUS_BUFFER_TOO_SMALL` is returned.
//
// # Safety
// `samples` must hold `sample_count` values and `bytes` room for `capacity`.
enum EcgStatus ecg_212_encode(const int16_t *samples,
                              size_t sample_count,
                              uint8_t *bytes,
                              size_t capacity,
                              size_t *written);

// Fits a GP with the default Matérn-5/2 ARD configuration to `n` points of
// dimension `dim` (row-major `x`) and targets `y`.
//
// # Safety
// `x` must hold `n * dim` values, `y` `n` values; `*gp` receives a handle
// to release with [`ecg_gp_free`].
enum EcgStatus ecg_gp_fit(const double *x,
                          size_t n,
                          size_t dim,
                          const double *y,
                          uint64_t seed,
                          struct EcgGp **gp);

// Posterior mean and variance (original target units) at one point.
//
// # Safety
// `gp` must come from [`ecg_gp_fit`]; `x` must hold `dim` values.
enum EcgStatus ecg_gp_posterior(const struct EcgGp *gp,
                                const double *x,
                                size_t dim,
                                double *mean,
                                double *variance);

// # Safety
// `gp` must come from [`ecg_gp_fit`].
enum EcgStatus ecg_gp_log_marginal_likelihood(const struct EcgGp *gp, double *value);

// # Safety
// `gp` must be null or come from [`ecg_gp_fit`], and not be used afterwards.
void ecg_gp_free(struct EcgGp *gp);

// Expected improvement below `best` for a Gaussian posterior, minimising.
//
// # Safety
// `value` must be writable.
enum EcgStatus ecg_expected_improvement(double mean, double variance, double best, double *value);

// Dimension of the default search space.
size_t ecg_space_dim(void);

// Maps a point of the default search space to the unit cube.
//
// # Safety
// `unit` must have room for `dim` values, `dim == ecg_space_dim()`.
enum EcgStatus ecg_space_encode(const struct EcgHyperParams *h, double *unit, size_t dim);

// Maps a unit-cube point back to native units (integers rounded).
//
// # Safety
// `unit` must hold `dim` values.
enum EcgStatus ecg_space_decode(const double *unit, size_t dim, struct EcgHyperParams *h);

// # Safety
// `path` must be a NUL-terminated UTF-8 string; `*model` receives a handle
// to release with [`ecg_model_free`].
enum EcgStatus ecg_model_load(const char *path, struct EcgModel **model);

// Input length and class count of a loaded model.
//
// # Safety
// `model` must come from [`ecg_model_load`].
enum EcgStatus ecg_model_shape(const struct EcgModel *model,
                               size_t *input_length,
                               size_t *class_count);

// Class probabilities for `count` signals of `length` samples each
// (row-major), written row-major into `probabilities`.
//
// # Safety
// `signals` must hold `count * length` values and `probabilities` room for
// `count * class_count`.
enum EcgStatus ecg_model_predict(const struct EcgModel *model,
                                 const double *signals,
                                 size_t count,
                                 size_t length,
                                 double *probabilities);

// # Safety
// `model` must be null or come from [`ecg_model_load`], and not be used afterwards.
void ecg_model_free(struct EcgModel *model);

// Scores `n` predictions over `class_count` classes.
//
// # Safety
// `y_true` and `y_pred` must hold `n` labels each.
enum EcgStatus ecg_metrics(const uint32_t *y_true,
                           const uint32_t *y_pred,
                           size_t n,
                           size_t class_count,
                           struct EcgScores *scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECGTUNE_H */
