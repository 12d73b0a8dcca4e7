#ifndef ADARC_H
#define ADARC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdarcNormalization {
  ADARC_NORMALIZATION_SYMMETRIC = 0,
  ADARC_NORMALIZATION_ROW = 1,
} AdarcNormalization;

typedef enum AdarcLoss {
  ADARC_LOSS_PIC = 0,
  ADARC_LOSS_ENTROPY = 1,
  ADARC_LOSS_PSEUDO = 2,
  ADARC_LOSS_DIFF = 3,
} AdarcLoss;

typedef enum AdarcBase {
  ADARC_BASE_ERM = 0,
  ADARC_BASE_TENT = 1,
  ADARC_BASE_T3A = 2,
} AdarcBase;

typedef enum AdarcStatus {
  ADARC_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8, or a parameter out of range.
   */
  ADARC_STATUS_INVALID_ARGUMENT = 1,
  ADARC_STATUS_IO = 2,
  /**
   * A file exists but does not parse.
   */
  ADARC_STATUS_FORMAT = 3,
  /**
   * NaN, overflow or divergence.
   */
  ADARC_STATUS_NUMERICAL = 4,
  /**
   * Representations with (near) zero variance.
   */
  ADARC_STATUS_DEGENERATE = 5,
  /**
   * Shapes that do not fit together.
   */
  ADARC_STATUS_DIMENSION_MISMATCH = 6,
  ADARC_STATUS_INTERNAL = 7,
} AdarcStatus;

/**
 * Opaque dataset handle.
 */
typedef struct AdarcDataset AdarcDataset;

/**
 * Opaque model handle.
 */
typedef struct AdarcModel AdarcModel;

typedef struct AdarcTrainOptions {
  size_t hidden;
  size_t hops;
  double learning_rate;
  size_t epochs;
  double weight_decay;
  size_t patience;
  uint64_t seed;
  enum AdarcNormalization normalization;
} AdarcTrainOptions;

typedef struct AdarcAdaptOptions {
  double learning_rate;
  size_t epochs;
  enum AdarcLoss loss;
  enum AdarcBase base;
  size_t tent_steps;
  double tent_lr;
  size_t t3a_keep;
  enum AdarcNormalization normalization;
} AdarcAdaptOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `capacity`, into `buffer`. Returns the full message length
 * plus one, so a return value above `capacity` means truncation. An empty
 * message means the last call succeeded.
 *
 * # Safety
 * `buffer` must be null or point to `capacity` writable bytes.
 */
size_t adarc_last_error(char *buffer, size_t capacity);

struct AdarcTrainOptions adarc_train_options_default(void);

struct AdarcAdaptOptions adarc_adapt_options_default(void);

/**
 * Samples a two-class CSBM graph with every entry of the class centre equal
 * to `mu_entry` and every entry of the shared shift equal to `delta_entry`.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a new handle.
 */
enum AdarcStatus adarc_csbm_generate(size_t num_nodes,
                                     size_t dim,
                                     double mu_entry,
                                     double delta_entry,
                                     double avg_degree,
                                     double homophily,
                                     double noise_std,
                                     uint64_t seed,
                                     struct AdarcDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AdarcStatus adarc_dataset_load(const char *path, struct AdarcDataset **out);

/**
 * # Safety
 * `dataset` must be a live handle and `path` a NUL-terminated string.
 */
enum AdarcStatus adarc_dataset_save(const struct AdarcDataset *dataset, const char *path);

/**
 * Returns 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t adarc_dataset_num_nodes(const struct AdarcDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t adarc_dataset_num_classes(const struct AdarcDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void adarc_dataset_free(struct AdarcDataset *dataset);

/**
 * Trains a fresh model on the `train` mask, selecting on `val`.
 *
 * # Safety
 * `dataset` must be a live handle; `options` and `out` valid pointers.
 */
enum AdarcStatus adarc_pretrain(const struct AdarcDataset *dataset,
                                const struct AdarcTrainOptions *options,
                                struct AdarcModel **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AdarcStatus adarc_model_load(const char *path, struct AdarcModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum AdarcStatus adarc_model_save(const struct AdarcModel *model, const char *path);

/**
 * Number of hop weights, `K + 1`. Returns 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t adarc_model_num_gamma(const struct AdarcModel *model);

/**
 * Copies the hop weights into `out`, which must hold
 * [`adarc_model_num_gamma`] values.
 *
 * # Safety
 * `model` must be a live handle and `out` point to `len` writable doubles.
 */
enum AdarcStatus adarc_model_gamma(const struct AdarcModel *model, double *out, size_t len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void adarc_model_free(struct AdarcModel *model);

/**
 * Adapts the hop weights of `model` to `dataset` without labels. The
 * adapted model is returned as a new handle; `model` is left unchanged.
 * When `predictions` is non-null it receives one class index per node.
 *
 * # Safety
 * Handles must be live, `options` and `out` valid, and `predictions` null
 * or pointing to `num_nodes` writable slots.
 */
enum AdarcStatus adarc_adapt(const struct AdarcModel *model,
                             const struct AdarcDataset *dataset,
                             const struct AdarcAdaptOptions *options,
                             struct AdarcModel **out,
                             size_t *predictions,
                             size_t num_nodes);

/**
 * Accuracy of `model` on `dataset`, restricted to the named mask
 * (`train`, `val`, `test`) or over all nodes when `mask` is null.
 *
 * # Safety
 * Handles must be live, `mask` null or NUL-terminated, `accuracy` valid.
 */
enum AdarcStatus adarc_evaluate(const struct AdarcModel *model,
                                const struct AdarcDataset *dataset,
                                const char *mask,
                                enum AdarcNormalization normalization,
                                double *accuracy);

/**
 * Intra-class variance over total variance of the row-major `n x h`
 * representations `z` under the row-major `n x c` class probabilities.
 *
 * # Safety
 * `z` must point to `n * h` doubles, `probs` to `n * c`, `loss` be valid.
 */
enum AdarcStatus adarc_pic_loss(const double *z,
                                size_t n,
                                size_t h,
                                const double *probs,
                                size_t c,
                                double *loss);

/**
 * Accuracy of the best linear classifier on one-layer aggregated CSBM
 * representations with hop weight `gamma`.
 */
double adarc_closed_form_accuracy(double mu_norm, double degree, double homophily, double gamma);

/**
 * The hop weight that maximizes [`adarc_closed_form_accuracy`].
 */
double adarc_optimal_gamma(double degree, double homophily);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADARC_H */
