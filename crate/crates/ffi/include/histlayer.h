#ifndef HISTLAYER_H
#define HISTLAYER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HlStatus {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_ARGUMENT = 2,
  HL_STATUS_SHAPE_MISMATCH = 3,
  HL_STATUS_BUFFER_TOO_SMALL = 4,
  HL_STATUS_IO = 5,
  HL_STATUS_MALFORMED = 6,
  HL_STATUS_PANIC = 7,
} HlStatus;

/**
 * Values accepted in [`HlHistConfig::binning`].
 */
typedef enum HlBinning {
  HL_BINNING_RBF = 0,
  HL_BINNING_PIECEWISE_LINEAR = 1,
} HlBinning;

/**
 * Values accepted in [`HlHistConfig::init`].
 */
typedef enum HlInit {
  HL_INIT_EQUISPACED_ON_RANGE = 0,
  HL_INIT_UNIFORM_SYMMETRIC = 1,
} HlInit;

/**
 * Values accepted by [`hl_model_new`].
 */
typedef enum HlVariant {
  HL_VARIANT_CONV_ONLY = 0,
  HL_VARIANT_HIST_ONLY = 1,
  HL_VARIANT_COMBINATION = 2,
} HlVariant;

typedef struct HlDataset HlDataset;

typedef struct HlHistLayer HlHistLayer;

typedef struct HlModel HlModel;

typedef struct HlHistConfig {
  uint32_t bins;
  uint32_t channels;
  uint32_t window_h;
  uint32_t window_w;
  uint32_t stride_h;
  uint32_t stride_w;
  /**
   * An `HlBinning` value.
   */
  uint32_t binning;
  bool normalize_count;
  bool sum_to_one;
  /**
   * Input channels of a learnable 1x1 reduction to `channels`; 0 for none.
   */
  uint32_t reduce_from;
  /**
   * An `HlInit` value.
   */
  uint32_t init;
  double init_lo;
  double init_hi;
} HlHistConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *hl_last_error_message(void);

/**
 * Static, NUL-terminated crate version.
 */
const char *hl_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void hl_string_free(char *s);

/**
 * Creates a histogram layer with parameters from the config's init scheme.
 *
 * # Safety
 * `config` must point to a valid `HlHistConfig`; `out` must be writable.
 */
enum HlStatus hl_hist_layer_new(const struct HlHistConfig *config,
                                uint64_t seed,
                                struct HlHistLayer **out);

/**
 * # Safety
 * `layer` must come from [`hl_hist_layer_new`] and not have been freed.
 */
void hl_hist_layer_free(struct HlHistLayer *layer);

/**
 * Number of centers (equal to the number of widths), `bins * channels`.
 *
 * # Safety
 * `layer` must be a live handle; `out` must be writable.
 */
enum HlStatus hl_hist_layer_bin_params(const struct HlHistLayer *layer, size_t *out);

/**
 * Total learnable parameters, including any reduction convolution.
 *
 * # Safety
 * `layer` must be a live handle; `out` must be writable.
 */
enum HlStatus hl_hist_layer_param_count(const struct HlHistLayer *layer, size_t *out);

/**
 * Copies centers and widths (row-major `(bins, channels)`) into the buffers.
 *
 * # Safety
 * Both buffers must hold `len` writable doubles.
 */
enum HlStatus hl_hist_layer_get_params(const struct HlHistLayer *layer,
                                       double *centers,
                                       double *widths,
                                       size_t len);

/**
 * Replaces centers and widths; `len` must equal `bins * channels`.
 *
 * # Safety
 * Both buffers must hold `len` readable doubles.
 */
enum HlStatus hl_hist_layer_set_params(struct HlHistLayer *layer,
                                       const double *centers,
                                       const double *widths,
                                       size_t len);

/**
 * Output shape `(N, B*K, R, C)` for an input of shape `in_shape`.
 *
 * # Safety
 * `in_shape` must hold 4 readable values and `out_shape` 4 writable ones.
 */
enum HlStatus hl_hist_layer_output_shape(const struct HlHistLayer *layer,
                                         const size_t *in_shape,
                                         size_t *out_shape);

/**
 * Forward pass of an `(N, C, H, W)` input into `out` (`out_len` doubles).
 *
 * # Safety
 * `shape` holds 4 values, `x` the product of them, `out` `out_len` doubles.
 */
enum HlStatus hl_hist_layer_forward(const struct HlHistLayer *layer,
                                    const size_t *shape,
                                    const double *x,
                                    double *out,
                                    size_t out_len);

/**
 * Same result as [`hl_hist_layer_forward`] through the composed-primitive
 * path (RBF only).
 *
 * # Safety
 * As for [`hl_hist_layer_forward`].
 */
enum HlStatus hl_hist_layer_forward_composed(const struct HlHistLayer *layer,
                                             const size_t *shape,
                                             const double *x,
                                             double *out,
                                             size_t out_len);

/**
 * Gradients of `sum(upstream * forward(x))`. `grad_centers` and
 * `grad_widths` hold `params_len` doubles; `grad_input` may be null,
 * otherwise it holds `input_len` doubles.
 *
 * # Safety
 * All non-null buffers must be valid for the stated lengths.
 */
enum HlStatus hl_hist_layer_backward(const struct HlHistLayer *layer,
                                     const size_t *shape,
                                     const double *x,
                                     const double *upstream,
                                     size_t upstream_len,
                                     double *grad_centers,
                                     double *grad_widths,
                                     size_t params_len,
                                     double *grad_input,
                                     size_t input_len);

/**
 * Bin parameters as JSON `{bins, channels, centers, widths}`. Free the
 * string with [`hl_string_free`].
 *
 * # Safety
 * `layer` must be a live handle; `out` must be writable.
 */
enum HlStatus hl_hist_layer_params_json(const struct HlHistLayer *layer, char **out);

/**
 * Generates the 900-image synthetic dataset with `size x size` images.
 *
 * # Safety
 * `out` must be writable.
 */
enum HlStatus hl_dataset_generate(uint32_t size, uint64_t seed, struct HlDataset **out);

/**
 * # Safety
 * `ds` must come from [`hl_dataset_generate`] and not have been freed.
 */
void hl_dataset_free(struct HlDataset *ds);

/**
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum HlStatus hl_dataset_len(const struct HlDataset *ds, size_t *out);

/**
 * Copies image `index` into `pixels` (`len` bytes, at least `size * size`)
 * and writes its joint class and split (0 train, 1 val, 2 test).
 *
 * # Safety
 * `pixels` must hold `len` writable bytes; `class_out` and `split_out`
 * must be writable.
 */
enum HlStatus hl_dataset_image(const struct HlDataset *ds,
                               size_t index,
                               uint8_t *pixels,
                               size_t len,
                               uint32_t *class_out,
                               uint32_t *split_out);

/**
 * Writes PGM images and the CSV manifest under `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated UTF-8 path.
 */
enum HlStatus hl_dataset_write(const struct HlDataset *ds, const char *dir);

/**
 * Builds one of the synthetic architectures (an `HlVariant` value).
 *
 * # Safety
 * `out` must be writable.
 */
enum HlStatus hl_model_new(uint32_t variant,
                           uint32_t num_classes,
                           uint64_t seed,
                           struct HlModel **out);

/**
 * # Safety
 * `model` must come from [`hl_model_new`] and not have been freed.
 */
void hl_model_free(struct HlModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HlStatus hl_model_param_count(const struct HlModel *model, size_t *out);

/**
 * Logits `(N, classes)` for an `(N, 1, H, W)` batch.
 *
 * # Safety
 * `shape` holds 4 values, `x` the product of them, `logits` `len` doubles.
 */
enum HlStatus hl_model_forward(const struct HlModel *model,
                               const size_t *shape,
                               const double *x,
                               double *logits,
                               size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HISTLAYER_H */
