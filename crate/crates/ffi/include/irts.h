#ifndef IRTS_H
#define IRTS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum IrtsStatus {
  IRTS_STATUS_OK = 0,
  IRTS_STATUS_NULL_POINTER = 1,
  IRTS_STATUS_INVALID_ARGUMENT = 2,
  IRTS_STATUS_IO = 3,
  IRTS_STATUS_FORMAT = 4,
  IRTS_STATUS_CHECKPOINT = 5,
  IRTS_STATUS_CAPABILITY = 6,
  IRTS_STATUS_DIVERGENCE = 7,
  IRTS_STATUS_PANIC = 8,
  IRTS_STATUS_INTERNAL = 9,
} IrtsStatus;

/*
 A loaded or generated dataset.
 */
typedef struct IrtsDataset IrtsDataset;

/*
 A trained model together with the checkpoint it was restored from.
 */
typedef struct IrtsModel IrtsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *irts_version(void);

/*
 Message of the most recent failure on this thread; empty if none. The
 pointer stays valid until the next failing call on this thread.
 */
const char *irts_last_error(void);

/*
 Generates `n_cases` synthetic three-channel cases.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum IrtsStatus irts_dataset_generate(size_t n_cases,
                                      uint64_t seed,
                                      bool labeled,
                                      struct IrtsDataset **out);

/*
 Reads a JSONL dataset.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IrtsStatus irts_dataset_load(const char *path, struct IrtsDataset **out);

/*
 Writes a dataset as JSONL.

 # Safety
 `ds` must be a live dataset handle; `path` a NUL-terminated string.
 */
enum IrtsStatus irts_dataset_save(const struct IrtsDataset *ds, const char *path);

/*
 Number of cases; 0 for a null handle.

 # Safety
 `ds` must be null or a live dataset handle.
 */
size_t irts_dataset_len(const struct IrtsDataset *ds);

/*
 Number of channels; 0 for a null handle.

 # Safety
 `ds` must be null or a live dataset handle.
 */
size_t irts_dataset_channels(const struct IrtsDataset *ds);

/*
 Releases a dataset. Null is ignored.

 # Safety
 `ds` must be null or a handle not yet freed.
 */
void irts_dataset_free(struct IrtsDataset *ds);

/*
 Trains a model. `config_json` is a JSON training configuration, or null
 for the defaults with the channel count taken from `train_set`.

 # Safety
 Dataset handles must be live; `config_json` null or NUL-terminated;
 `out` writable.
 */
enum IrtsStatus irts_train(const char *config_json,
                           const struct IrtsDataset *train_set,
                           const struct IrtsDataset *valid_set,
                           struct IrtsModel **out);

/*
 Restores a model from a checkpoint file.

 # Safety
 `path` must be NUL-terminated; `out` writable.
 */
enum IrtsStatus irts_model_load(const char *path, struct IrtsModel **out);

/*
 Writes the model's checkpoint.

 # Safety
 `model` must be a live handle; `path` NUL-terminated.
 */
enum IrtsStatus irts_model_save(const struct IrtsModel *model, const char *path);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must be null or a handle not yet freed.
 */
void irts_model_free(struct IrtsModel *model);

/*
 Latent dimension; 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t irts_model_latent_dim(const struct IrtsModel *model);

/*
 Number of classes of the classifier head; 0 without one.

 # Safety
 `model` must be null or a live handle.
 */
size_t irts_model_classes(const struct IrtsModel *model);

/*
 One posterior completion of case `case_index` evaluated at `n` queries
 `(channels[i], times[i])` (0-based channels, times in [0, 1]); results go
 to `out[0..n]`. Randomness is keyed by `(seed, case_index)`, matching the
 `irts impute` command.

 # Safety
 Handles must be live; `channels`, `times` and `out` must hold `n` items.
 */
enum IrtsStatus irts_model_impute(const struct IrtsModel *model,
                                  const struct IrtsDataset *ds,
                                  size_t case_index,
                                  const size_t *channels,
                                  const double *times,
                                  size_t n,
                                  uint64_t seed,
                                  double *out);

/*
 Predicted class of case `case_index` from `samples` posterior draws.
 When `logp` is non-null it receives the per-class mean log-probabilities
 and must hold [`irts_model_classes`] items.

 # Safety
 Handles must be live; `out_class` writable; `logp` null or large enough.
 */
enum IrtsStatus irts_model_predict(const struct IrtsModel *model,
                                   const struct IrtsDataset *ds,
                                   size_t case_index,
                                   size_t samples,
                                   uint64_t seed,
                                   size_t *out_class,
                                   double *logp);

/*
 Area under the ROC curve of `scores` against binary `labels` (nonzero
 is positive).

 # Safety
 `scores` and `labels` must hold `n` items; `out` must be writable.
 */
enum IrtsStatus irts_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRTS_H */
