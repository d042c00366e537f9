#ifndef LDTCAST_H
#define LDTCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LdtStatus {
  LDT_STATUS_OK = 0,
  // A required pointer was null.
  LDT_STATUS_NULL_ARGUMENT = 1,
  // Invalid option or argument value.
  LDT_STATUS_INVALID_ARGUMENT = 2,
  // Array lengths disagree with the model or with each other.
  LDT_STATUS_SHAPE = 3,
  // Input data was unusable.
  LDT_STATUS_DATA = 4,
  // File could not be read or parsed.
  LDT_STATUS_IO = 5,
  // Numerical failure in the model.
  LDT_STATUS_NUMERIC = 6,
  // A Rust panic was caught at the boundary.
  LDT_STATUS_INTERNAL = 7,
} LdtStatus;

typedef enum LdtEmbedMode {
  LDT_EMBED_MODE_LAST = 0,
  LDT_EMBED_MODE_ALL = 1,
} LdtEmbedMode;

typedef enum LdtEmbedSource {
  LDT_EMBED_SOURCE_H = 0,
  LDT_EMBED_SOURCE_SC = 1,
  LDT_EMBED_SOURCE_H_SC = 2,
} LdtEmbedSource;

// Opaque trained model.
typedef struct LdtModel LdtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version string of the library; static storage.
const char *ldt_version(void);

// Message of the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *ldt_last_error(void);

// Loads a model checkpoint (`model.json`) into a new handle.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum LdtStatus ldt_model_load(const char *path, struct LdtModel **out);

// Releases a handle; null is ignored.
//
// # Safety
// `model` must come from `ldt_model_load` and not be used afterwards.
void ldt_model_free(struct LdtModel *model);

// Shape of a loaded model. Any output pointer may be null.
//
// # Safety
// Non-null output pointers must be writable.
enum LdtStatus ldt_model_info(const struct LdtModel *model,
                              size_t *hidden_size,
                              size_t *num_layers,
                              size_t *static_dim,
                              size_t *window_len);

// Number of values written by `ldt_model_embed` for this mode and source.
//
// # Safety
// `out` must be writable.
enum LdtStatus ldt_model_embedding_len(const struct LdtModel *model,
                                       enum LdtEmbedMode mode,
                                       enum LdtEmbedSource source,
                                       size_t *out);

// Embedding of the first `pit` days of a series. `out_len` must equal
// `ldt_model_embedding_len`.
//
// # Safety
// Input arrays must hold `len` (`static_len`) values; `out` must hold
// `out_len` writable values.
enum LdtStatus ldt_model_embed(const struct LdtModel *model,
                               const double *infections,
                               const double *deaths,
                               size_t len,
                               const double *statics,
                               size_t static_len,
                               size_t pit,
                               enum LdtEmbedMode mode,
                               enum LdtEmbedSource source,
                               double *out,
                               size_t out_len);

// Recursive forecast of `horizon` days past the end of the series.
//
// # Safety
// Input arrays must hold `len` (`static_len`) values; each output array
// must hold `horizon` writable values.
enum LdtStatus ldt_model_forecast(const struct LdtModel *model,
                                  const double *infections,
                                  const double *deaths,
                                  size_t len,
                                  const double *statics,
                                  size_t static_len,
                                  size_t horizon,
                                  double *out_infections,
                                  double *out_deaths);

// Adjusted Rand index of two label vectors of length `n`.
//
// # Safety
// `a` and `b` must hold `n` values; `out` must be writable.
enum LdtStatus ldt_adjusted_rand_index(const size_t *a, const size_t *b, size_t n, double *out);

// Best diagonal fraction over relabelings of a row-major `k x k`
// confusion matrix.
//
// # Safety
// `counts` must hold `k * k` values; `out` must be writable.
enum LdtStatus ldt_permutation_accuracy(const uint64_t *counts, size_t k, double *out);

// Running maximum of a cumulative series; `out` may alias `series`.
//
// # Safety
// `series` and `out` must each hold `n` values.
enum LdtStatus ldt_repair_monotone(const double *series, size_t n, double *out);

// k-means with k-means++ seeding over `restarts` runs on row-major
// `n x dim` points. `inertia` may be null.
//
// # Safety
// `points` must hold `n * dim` values and `labels` `n` writable values.
enum LdtStatus ldt_kmeans(const double *points,
                          size_t n,
                          size_t dim,
                          size_t k,
                          size_t restarts,
                          uint64_t seed,
                          size_t *labels,
                          double *inertia);

// k-medoids (PAM) on row-major `n x dim` points. `inertia` may be null.
//
// # Safety
// `points` must hold `n * dim` values and `labels` `n` writable values.
enum LdtStatus ldt_kmedoids(const double *points,
                            size_t n,
                            size_t dim,
                            size_t k,
                            size_t restarts,
                            uint64_t seed,
                            size_t *labels,
                            double *inertia);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LDTCAST_H */
