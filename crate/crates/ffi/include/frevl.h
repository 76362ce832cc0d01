#ifndef FREVL_H
#define FREVL_H

#include <stddef.h>
#include <stdint.h>

// Label type stored in a cache.
typedef enum FrevlLabelKind {
  FREVL_LABEL_KIND_NONE = 0,
  FREVL_LABEL_KIND_CLASS = 1,
  FREVL_LABEL_KIND_SCALAR = 2,
} FrevlLabelKind;

// Result of every fallible call. `FREVL_STATUS_OK` is zero.
typedef enum FrevlStatus {
  FREVL_STATUS_OK = 0,
  // A required pointer argument was null.
  FREVL_STATUS_NULL_POINTER = 1,
  // An argument was out of range or malformed, e.g. a non-UTF-8 path.
  FREVL_STATUS_INVALID_ARGUMENT = 2,
  // A file could not be read.
  FREVL_STATUS_IO = 3,
  // A file was read but its contents are not a valid cache or checkpoint.
  FREVL_STATUS_CORRUPT = 4,
  // Inputs do not match the model, e.g. wrong widths or non-unit rows.
  FREVL_STATUS_BAD_INPUT = 5,
  // The computation produced a non-finite value.
  FREVL_STATUS_NUMERIC = 6,
  // An unexpected internal failure; the message has details.
  FREVL_STATUS_INTERNAL = 7,
} FrevlStatus;

// A decoded embedding cache.
typedef struct FrevlCache FrevlCache;

// A loaded fusion network.
typedef struct FrevlModel FrevlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *frevl_version(void);

// Message for the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *frevl_last_error(void);

// Loads a checkpoint. On success `*out` owns a model to be released with
// `frevl_model_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FrevlStatus frevl_model_load(const char *path, struct FrevlModel **out);

// # Safety
// `model` must come from `frevl_model_load` and not have been freed. NULL is
// accepted and ignored.
void frevl_model_free(struct FrevlModel *model);

// Input and output widths of a model. Any output pointer may be NULL.
//
// # Safety
// `model` must be a live handle; non-null outputs must be writable.
enum FrevlStatus frevl_model_dims(const struct FrevlModel *model,
                                  size_t *d_v,
                                  size_t *d_t,
                                  size_t *out_dim);

// Eval-mode forward pass over `batch` pairs. `image` holds `batch × d_v`
// and `text` `batch × d_t` row-major unit-norm floats; `out` receives
// `batch × out_dim` values and `out_len` must be at least that.
//
// # Safety
// Every pointer must reference at least the number of floats stated above.
enum FrevlStatus frevl_model_forward(const struct FrevlModel *model,
                                     const float *image,
                                     const float *text,
                                     size_t batch,
                                     float *out,
                                     size_t out_len);

// One relevance score per pair: the output itself for one-wide heads, else
// last logit minus first. `scores` receives `batch` floats.
//
// # Safety
// As `frevl_model_forward`, with `scores` holding `batch` floats.
enum FrevlStatus frevl_model_score(const struct FrevlModel *model,
                                   const float *image,
                                   const float *text,
                                   size_t batch,
                                   float *scores);

// Reads an embedding cache. On success `*out` owns a cache to be released
// with `frevl_cache_free`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FrevlStatus frevl_cache_open(const char *path, struct FrevlCache **out);

// # Safety
// `cache` must come from `frevl_cache_open` and not have been freed. NULL is
// accepted and ignored.
void frevl_cache_free(struct FrevlCache *cache);

// Record count, vector widths and label type. Any output pointer may be NULL.
//
// # Safety
// `cache` must be a live handle; non-null outputs must be writable.
enum FrevlStatus frevl_cache_info(const struct FrevlCache *cache,
                                  size_t *count,
                                  size_t *d_v,
                                  size_t *d_t,
                                  enum FrevlLabelKind *label_kind);

// Copies record `index`. `image` and `text` receive `d_v` and `d_t` floats.
// `class_label` is set for class-labelled caches and `scalar_label` for
// scalar ones; other outputs are left untouched. Every output may be NULL.
//
// # Safety
// `cache` must be a live handle; non-null buffers must be large enough.
enum FrevlStatus frevl_cache_record(const struct FrevlCache *cache,
                                    size_t index,
                                    uint64_t *id,
                                    float *image,
                                    float *text,
                                    uint32_t *class_label,
                                    float *scalar_label);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FREVL_H */
