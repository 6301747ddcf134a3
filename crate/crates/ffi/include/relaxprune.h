#ifndef RELAXPRUNE_H
#define RELAXPRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_NULL_POINTER = 1,
  RP_STATUS_INVALID_STRING = 2,
  RP_STATUS_IO = 3,
  RP_STATUS_PARSE = 4,
  RP_STATUS_VALIDATION = 5,
  RP_STATUS_DIMENSION = 6,
  RP_STATUS_PARAMETER = 7,
  RP_STATUS_FORMAT = 8,
  RP_STATUS_CONTRACT = 9,
  RP_STATUS_OTHER = 10,
  RP_STATUS_PANIC = 11,
} RpStatus;

/**
 * Labelled examples.
 */
typedef struct RpDataset RpDataset;

/**
 * A trained network.
 */
typedef struct RpModel RpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rp_last_error(void);

/**
 * Loads the model stored in a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RpStatus rp_checkpoint_load(const char *path, struct RpModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void rp_model_free(struct RpModel *model);

/**
 * Number of `f64` values per input example.
 *
 * # Safety
 * Pointers must be valid.
 */
enum RpStatus rp_model_input_len(const struct RpModel *model, size_t *out);

/**
 * # Safety
 * Pointers must be valid.
 */
enum RpStatus rp_model_classes(const struct RpModel *model, size_t *out);

/**
 * Predicted classes for `n` row-major examples.
 *
 * # Safety
 * `inputs` must hold `n × input_len` values and `labels` room for `n`.
 */
enum RpStatus rp_model_predict(const struct RpModel *model,
                               const double *inputs,
                               size_t n,
                               size_t *labels);

/**
 * Percentage of weights that are exactly zero.
 *
 * # Safety
 * Pointers must be valid.
 */
enum RpStatus rp_model_sparsity(const struct RpModel *model, double *out);

/**
 * Percentage of channels whose weights are all zero.
 *
 * # Safety
 * Pointers must be valid.
 */
enum RpStatus rp_model_channel_sparsity(const struct RpModel *model, double *out);

/**
 * Reads a CSV of feature columns followed by an integer label.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RpStatus rp_dataset_load_csv(const char *path, bool header, struct RpDataset **out);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void rp_dataset_free(struct RpDataset *dataset);

/**
 * # Safety
 * Pointers must be valid.
 */
enum RpStatus rp_dataset_len(const struct RpDataset *dataset, size_t *out);

/**
 * Accuracy in percent under an attack such as `"none"`, `"fgsm:eps=8/255"`
 * or `"ifgsm:eps=8/255,alpha=2/255,steps=20"`.
 *
 * # Safety
 * Pointers must be valid; `attack` NUL-terminated.
 */
enum RpStatus rp_accuracy(const struct RpModel *model,
                          const struct RpDataset *dataset,
                          const char *attack,
                          uint64_t seed,
                          double *out);

/**
 * In place: zero every value with `|v| ≤ threshold`.
 *
 * # Safety
 * `values` must hold `len` values.
 */
enum RpStatus rp_hard_threshold(double *values, size_t len, double threshold);

/**
 * In place: `sign(v)·max(|v| − threshold, 0)`.
 *
 * # Safety
 * `values` must hold `len` values.
 */
enum RpStatus rp_soft_threshold(double *values, size_t len, double threshold);

/**
 * In place group shrinkage of one group by `lambda`.
 *
 * # Safety
 * `values` must hold `len` values.
 */
enum RpStatus rp_prox_group_lasso(double *values, size_t len, double lambda);

/**
 * In place: zero the group when its norm is at most `√(2·lambda)`.
 *
 * # Safety
 * `values` must hold `len` values.
 */
enum RpStatus rp_prox_group_l0(double *values, size_t len, double lambda);

/**
 * Runs the experiment described by a config file. `out_dir` may be null
 * to keep the config's own output directory.
 *
 * # Safety
 * Strings must be NUL-terminated; `out_dir` may be null.
 */
enum RpStatus rp_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELAXPRUNE_H */
