#ifndef PROMPT_RETRIEVAL_H
#define PROMPT_RETRIEVAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PrStatus {
  PR_STATUS_OK = 0,
  PR_STATUS_NULL_POINTER = 1,
  PR_STATUS_INVALID_ARGUMENT = 2,
  PR_STATUS_IO = 3,
  PR_STATUS_PARSE = 4,
  PR_STATUS_NOT_FOUND = 5,
  PR_STATUS_SHAPE_MISMATCH = 6,
  PR_STATUS_PANIC = 7,
} PrStatus;

typedef enum PrMetric {
  PR_METRIC_COSINE = 0,
  PR_METRIC_EUCLIDEAN = 1,
  PR_METRIC_MANHATTAN = 2,
} PrMetric;

/**
 * Loaded embedding set.
 */
typedef struct PrEmbeddingSet PrEmbeddingSet;

/**
 * Projection head.
 */
typedef struct PrHead PrHead;

/**
 * Performance matrix with its sidecar metadata.
 */
typedef struct PrPerfMatrix PrPerfMatrix;

/**
 * Result of a top-K query.
 */
typedef struct PrRanking PrRanking;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pr_version(void);

/**
 * Message of the last failed call on this thread, or null. Owned by the library.
 */
const char *pr_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PrStatus pr_embedding_set_load(const char *path, struct PrEmbeddingSet **out);

/**
 * # Safety
 * `set` must come from `pr_embedding_set_load` and not be used afterwards. Null is ignored.
 */
void pr_embedding_set_free(struct PrEmbeddingSet *set);

/**
 * Number of records.
 *
 * # Safety
 * `set` must be a live handle and `out` a valid pointer.
 */
enum PrStatus pr_embedding_set_len(const struct PrEmbeddingSet *set, size_t *out);

/**
 * # Safety
 * `set` must be a live handle and `out` a valid pointer.
 */
enum PrStatus pr_embedding_set_dimension(const struct PrEmbeddingSet *set, size_t *out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PrStatus pr_head_load(const char *path, struct PrHead **out);

/**
 * # Safety
 * `head` must come from `pr_head_load` and not be used afterwards. Null is ignored.
 */
void pr_head_free(struct PrHead *head);

/**
 * Top-`k` sources for `query_id`, best first. `head` may be null.
 *
 * # Safety
 * `set` (and `head` unless null) must be live handles, `query_id` a
 * NUL-terminated string and `out` a valid pointer.
 */
enum PrStatus pr_retrieve_topk(const struct PrEmbeddingSet *set,
                               const char *query_id,
                               size_t k,
                               enum PrMetric metric,
                               const struct PrHead *head,
                               struct PrRanking **out);

/**
 * # Safety
 * `ranking` must come from `pr_retrieve_topk` and not be used afterwards. Null is ignored.
 */
void pr_ranking_free(struct PrRanking *ranking);

/**
 * Number of entries; 0 for null.
 *
 * # Safety
 * `ranking` must be a live handle or null.
 */
size_t pr_ranking_len(const struct PrRanking *ranking);

/**
 * Whether fewer than `k` candidates existed; false for null.
 *
 * # Safety
 * `ranking` must be a live handle or null.
 */
bool pr_ranking_truncated(const struct PrRanking *ranking);

/**
 * Id at rank `i` (0-based), borrowed from the ranking; null when out of range.
 *
 * # Safety
 * `ranking` must be a live handle or null.
 */
const char *pr_ranking_id(const struct PrRanking *ranking, size_t i);

/**
 * # Safety
 * `ranking` must be a live handle and `out` a valid pointer.
 */
enum PrStatus pr_ranking_score(const struct PrRanking *ranking, size_t i, double *out);

/**
 * Similarity of two vectors of length `len`; distances come back negated.
 *
 * # Safety
 * `a` and `b` must point to `len` doubles and `out` be a valid pointer.
 */
enum PrStatus pr_score(const double *a,
                       const double *b,
                       size_t len,
                       enum PrMetric metric,
                       double *out);

/**
 * Foreground IoU of two row-major `rows x cols` grids (cells >= 0.5 are foreground).
 *
 * # Safety
 * `pred` and `gt` must point to `rows * cols` doubles and `out` be a valid pointer.
 */
enum PrStatus pr_miou(const double *pred, const double *gt, size_t rows, size_t cols, double *out);

/**
 * Mean squared error of two row-major `rows x cols` grids.
 *
 * # Safety
 * `pred` and `gt` must point to `rows * cols` doubles and `out` be a valid pointer.
 */
enum PrStatus pr_mse(const double *pred, const double *gt, size_t rows, size_t cols, double *out);

/**
 * Loads a matrix binary and its `<path>.json` sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PrStatus pr_perf_matrix_load(const char *path, struct PrPerfMatrix **out);

/**
 * # Safety
 * `matrix` must come from `pr_perf_matrix_load` and not be used afterwards. Null is ignored.
 */
void pr_perf_matrix_free(struct PrPerfMatrix *matrix);

/**
 * # Safety
 * `matrix` must be a live handle; `n_queries` and `n_sources` valid pointers.
 */
enum PrStatus pr_perf_matrix_shape(const struct PrPerfMatrix *matrix,
                                   size_t *n_queries,
                                   size_t *n_sources);

/**
 * # Safety
 * `matrix` must be a live handle and `out` a valid pointer.
 */
enum PrStatus pr_perf_matrix_get(const struct PrPerfMatrix *matrix, size_t q, size_t s, float *out);

/**
 * # Safety
 * `matrix` must be a live handle and `out` a valid pointer.
 */
enum PrStatus pr_perf_matrix_higher_is_better(const struct PrPerfMatrix *matrix, bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROMPT_RETRIEVAL_H */
