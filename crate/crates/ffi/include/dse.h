#ifndef DSE_H
#define DSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum DseStatus {
  DSE_STATUS_OK = 0,
  DSE_STATUS_NULL_ARGUMENT = 1,
  DSE_STATUS_INVALID_UTF8 = 2,
  DSE_STATUS_IO = 3,
  DSE_STATUS_CHECKPOINT = 4,
  DSE_STATUS_BUFFER_TOO_SMALL = 5,
  DSE_STATUS_INVALID_INPUT = 6,
  DSE_STATUS_PANIC = 7,
} DseStatus;

/**
 * A loaded encoder.
 */
typedef struct DseModel DseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a checkpoint. On success `*out` receives a handle owned by the
 * caller; on failure it is set to null.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DseStatus dse_model_load(const char *path, struct DseModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`dse_model_load`] and not be used afterwards.
 */
void dse_model_free(struct DseModel *model);

/**
 * Width of the embeddings produced by [`dse_embed_text`], or 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t dse_model_embed_dim(const struct DseModel *model);

/**
 * Embed one text (mean-pooled view) into `out[0..dim]`. `out_len` must be
 * at least [`dse_model_embed_dim`].
 *
 * # Safety
 * `model` must be a live handle, `text` NUL-terminated and `out` valid for
 * `out_len` writes.
 */
enum DseStatus dse_embed_text(const struct DseModel *model,
                              const char *text,
                              double *out,
                              size_t out_len);

/**
 * Cosine similarity of two vectors of length `len`, written to `*out`.
 *
 * # Safety
 * `a` and `b` must be valid for `len` reads and `out` for one write.
 */
enum DseStatus dse_cosine(const double *a, const double *b, size_t len, double *out);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *dse_last_error_message(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *dse_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSE_H */
