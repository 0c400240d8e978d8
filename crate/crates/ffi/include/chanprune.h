#ifndef CHANPRUNE_H
#define CHANPRUNE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum CpStatus {
  CP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CP_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CP_STATUS_INVALID_UTF8 = 2,
  /**
   * A file could not be read or written.
   */
  CP_STATUS_IO = 3,
  /**
   * Malformed tensor, label, JSON or CSV input.
   */
  CP_STATUS_FORMAT = 4,
  /**
   * Invalid option value or argument combination.
   */
  CP_STATUS_CONFIG = 5,
  /**
   * Invalid architecture.
   */
  CP_STATUS_GRAPH = 6,
  /**
   * Invalid pruning plan.
   */
  CP_STATUS_PLAN = 7,
  /**
   * Weights do not match the architecture.
   */
  CP_STATUS_WEIGHTS = 8,
  /**
   * Numeric failure such as a non-finite result or failed factorization.
   */
  CP_STATUS_NUMERIC = 9,
  /**
   * The output buffer is too small; the required length was written.
   */
  CP_STATUS_BUFFER_TOO_SMALL = 10,
  /**
   * An internal panic was caught at the boundary.
   */
  CP_STATUS_PANIC = 11,
} CpStatus;

typedef struct CpDataset CpDataset;

typedef struct CpGraph CpGraph;

typedef struct CpWeights CpWeights;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cp_version(void);

/**
 * Message of the last failed call on this thread, or NULL if none.
 * The caller owns the result and frees it with `cp_string_free`.
 */
char *cp_last_error_message(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void cp_string_free(char *s);

/**
 * Loads an architecture JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum CpStatus cp_graph_load(const char *path, struct CpGraph **out);

/**
 * Parses an architecture from a JSON string.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CpStatus cp_graph_from_json(const char *json, struct CpGraph **out);

/**
 * Built-in architecture: `vgg16`, `resnet50` or `toy-cnn`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum CpStatus cp_graph_zoo(const char *name, struct CpGraph **out);

/**
 * # Safety
 * `graph` must be NULL or a live handle from this library.
 */
void cp_graph_free(struct CpGraph *graph);

/**
 * Serializes an architecture to JSON; free the result with `cp_string_free`.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum CpStatus cp_graph_to_json(const struct CpGraph *graph, char **out);

/**
 * Total FLOPs (multiply-accumulates) and parameters.
 *
 * # Safety
 * `graph` must be a live handle; `flops` and `params` must be writable.
 */
enum CpStatus cp_graph_counts(const struct CpGraph *graph, uint64_t *flops, uint64_t *params);

/**
 * FLOPs saved network-wide by removing one output channel of `layer_id`.
 *
 * # Safety
 * `graph` must be a live handle, `layer_id` a NUL-terminated string and
 * `out` writable.
 */
enum CpStatus cp_graph_floss(const struct CpGraph *graph, const char *layer_id, uint64_t *out);

/**
 * Loads weights from a manifest JSON path.
 *
 * # Safety
 * `manifest` must be a NUL-terminated string; `out` must be writable.
 */
enum CpStatus cp_weights_load(const char *manifest, struct CpWeights **out);

/**
 * Seeded random weights for `graph`.
 *
 * # Safety
 * `graph` must be a live handle; `out` must be writable.
 */
enum CpStatus cp_weights_random(const struct CpGraph *graph, uint64_t seed, struct CpWeights **out);

/**
 * Writes weights as `manifest.json` plus tensor files into `dir`.
 *
 * # Safety
 * `weights` must be a live handle; `dir` must be a NUL-terminated string.
 */
enum CpStatus cp_weights_save(const struct CpWeights *weights, const char *dir);

/**
 * # Safety
 * `weights` must be NULL or a live handle from this library.
 */
void cp_weights_free(struct CpWeights *weights);

/**
 * Loads an input tensor `[N, C, W, H]` and its label file.
 *
 * # Safety
 * `data` and `labels` must be NUL-terminated strings; `out` must be writable.
 */
enum CpStatus cp_dataset_load(const char *data, const char *labels, struct CpDataset **out);

/**
 * Number of samples, or 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t cp_dataset_len(const struct CpDataset *dataset);

/**
 * # Safety
 * `dataset` must be NULL or a live handle from this library.
 */
void cp_dataset_free(struct CpDataset *dataset);

/**
 * Top-1 accuracy of the model on the dataset.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum CpStatus cp_evaluate(const struct CpGraph *graph,
                          const struct CpWeights *weights,
                          const struct CpDataset *dataset,
                          double *out);

/**
 * Scores one channel given as `n` maps of `width * height` values with
 * labels in `0..num_classes`.
 *
 * # Safety
 * `values` must point to `n * width * height` floats, `labels` to `n`
 * labels, `metric` must be a NUL-terminated string and `out` writable.
 */
enum CpStatus cp_score_maps(const float *values,
                            const uint32_t *labels,
                            size_t n,
                            size_t width,
                            size_t height,
                            size_t num_classes,
                            const char *metric,
                            uint64_t seed,
                            double *out);

/**
 * Scores every output channel of `layer_id` on the dataset. Writes up to
 * `capacity` scores in channel order and the channel count to `len`; if
 * `capacity` is too small nothing is written to `scores` and
 * `CP_STATUS_BUFFER_TOO_SMALL` is returned. `capture_pre` scores the layer's
 * own output instead of the relu after it.
 *
 * # Safety
 * Handles must be live, strings NUL-terminated, `scores` valid for
 * `capacity` doubles (may be NULL when `capacity` is 0) and `len` writable.
 */
enum CpStatus cp_score_layer(const struct CpGraph *graph,
                             const struct CpWeights *weights,
                             const struct CpDataset *dataset,
                             const char *layer_id,
                             const char *metric,
                             bool capture_pre,
                             uint64_t seed,
                             double *scores,
                             size_t capacity,
                             size_t *len);

/**
 * Runs the FLOP-normalized sensitivity analysis and returns the full report
 * as JSON (free with `cp_string_free`). `scoring` may be NULL to score on
 * `validation`.
 *
 * # Safety
 * Handles must be live or NULL where allowed, `metric` NUL-terminated and
 * `out` writable.
 */
enum CpStatus cp_sensitivity(const struct CpGraph *graph,
                             const struct CpWeights *weights,
                             const struct CpDataset *validation,
                             const struct CpDataset *scoring,
                             const char *metric,
                             double alpha,
                             uint64_t seed,
                             char **out);

/**
 * Pruning plan JSON for the `k` least sensitive layers of a report.
 *
 * # Safety
 * `graph` must be live, `report_json` NUL-terminated and `out` writable.
 */
enum CpStatus cp_plan_from_report(const struct CpGraph *graph,
                                  const char *report_json,
                                  size_t k,
                                  char **out);

/**
 * Applies a plan, producing new graph and weight handles. The inputs are
 * left untouched.
 *
 * # Safety
 * Handles must be live, `plan_json` NUL-terminated and both outputs writable.
 */
enum CpStatus cp_prune(const struct CpGraph *graph,
                       const struct CpWeights *weights,
                       const char *plan_json,
                       struct CpGraph **out_graph,
                       struct CpWeights **out_weights);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHANPRUNE_H */
