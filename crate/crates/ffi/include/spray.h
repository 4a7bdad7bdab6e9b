#ifndef SPRAY_H
#define SPRAY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SprayStatus {
  SprayStatus_Ok = 0,
  SprayStatus_NullPointer = 1,
  SprayStatus_InvalidArgument = 2,
  SprayStatus_ShapeMismatch = 3,
  SprayStatus_DegenerateInput = 4,
  SprayStatus_NotConverged = 5,
  SprayStatus_Io = 6,
  SprayStatus_Internal = 7,
} SprayStatus;

typedef enum SprayMetric {
  SprayMetric_Euclidean = 0,
  SprayMetric_Wasserstein = 1,
  SprayMetric_GromovWasserstein = 2,
} SprayMetric;

/**
 * Pairwise distances between attribution maps.
 */
typedef struct SprayDistanceMatrix SprayDistanceMatrix;

/**
 * Smallest Laplacian eigenpairs of a KNN graph.
 */
typedef struct SprayEmbedding SprayEmbedding;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *spray_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *spray_last_error_message(void);

/**
 * Computes distances between `n` row-major `h × w` maps stored back to back
 * in `maps`. Solver settings are the library defaults.
 *
 * # Safety
 * `maps` must point to `n * h * w` readable doubles and `out` to writable
 * storage for one pointer.
 */
enum SprayStatus spray_distance_matrix_compute(const double *maps,
                                               size_t n,
                                               size_t h,
                                               size_t w,
                                               enum SprayMetric metric,
                                               struct SprayDistanceMatrix **out);

/**
 * # Safety
 * `dm` must be null or a handle from this library.
 */
size_t spray_distance_matrix_n(const struct SprayDistanceMatrix *dm);

/**
 * # Safety
 * `dm` must be a handle from this library and `value` writable.
 */
enum SprayStatus spray_distance_matrix_get(const struct SprayDistanceMatrix *dm,
                                           size_t i,
                                           size_t j,
                                           double *value);

/**
 * # Safety
 * `dm` must be null or a handle from this library that is not used again.
 */
void spray_distance_matrix_free(struct SprayDistanceMatrix *dm);

/**
 * KNN graph with `knn_k` neighbors, normalized Laplacian and its `q`
 * smallest eigenpairs.
 *
 * # Safety
 * `dm` must be a handle from this library and `out` writable.
 */
enum SprayStatus spray_embedding_compute(const struct SprayDistanceMatrix *dm,
                                         size_t knn_k,
                                         size_t q,
                                         uint64_t seed,
                                         struct SprayEmbedding **out);

/**
 * Number of samples (rows) in the embedding, 0 for null.
 *
 * # Safety
 * `emb` must be null or a handle from this library.
 */
size_t spray_embedding_n(const struct SprayEmbedding *emb);

/**
 * Number of eigenpairs, 0 for null.
 *
 * # Safety
 * `emb` must be null or a handle from this library.
 */
size_t spray_embedding_q(const struct SprayEmbedding *emb);

/**
 * Copies the ascending eigenvalues into `buf`, which must hold `len >= q`.
 *
 * # Safety
 * `emb` must be a handle from this library and `buf` writable for `len`
 * doubles.
 */
enum SprayStatus spray_embedding_eigenvalues(const struct SprayEmbedding *emb,
                                             double *buf,
                                             size_t len);

/**
 * Copies row `i` of Φ into `buf`, which must hold `len >= q`.
 *
 * # Safety
 * `emb` must be a handle from this library and `buf` writable for `len`
 * doubles.
 */
enum SprayStatus spray_embedding_row(const struct SprayEmbedding *emb,
                                     size_t i,
                                     double *buf,
                                     size_t len);

/**
 * Index before the largest gap among the first `max_k + 1` eigenvalues.
 *
 * # Safety
 * `eigenvalues` must point to `len` readable doubles and `k` be writable.
 */
enum SprayStatus spray_eigengap_estimate(const double *eigenvalues,
                                         size_t len,
                                         size_t max_k,
                                         size_t *k);

/**
 * Separability score τ of the embedding rows over `k_min..=k_max` clusters.
 *
 * # Safety
 * `emb` must be a handle from this library and `tau` writable.
 */
enum SprayStatus spray_tau_score(const struct SprayEmbedding *emb,
                                 size_t k_min,
                                 size_t k_max,
                                 uint64_t seed,
                                 double *tau);

/**
 * # Safety
 * `emb` must be null or a handle from this library that is not used again.
 */
void spray_embedding_free(struct SprayEmbedding *emb);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPRAY_H */
