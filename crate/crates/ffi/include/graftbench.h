#ifndef GRAFTBENCH_H
#define GRAFTBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  GB_STATUS_OK = 0,
  GB_STATUS_NULL_POINTER = 1,
  GB_STATUS_INVALID_UTF8 = 2,
  GB_STATUS_INVALID_ARGUMENT = 3,
  GB_STATUS_IO = 4,
  GB_STATUS_PARSE = 5,
  GB_STATUS_DATA = 6,
  GB_STATUS_SHAPE = 7,
  GB_STATUS_CONFIG = 8,
  GB_STATUS_NUMERIC = 9,
  /**
   * The output buffer is too small; the required length was written.
   */
  GB_STATUS_BUFFER_TOO_SMALL = 10,
  GB_STATUS_PANIC = 11,
} gb_status;

/**
 * Opaque encoder checkpoint together with its tokenizer.
 */
typedef struct gb_model gb_model;

/**
 * Opaque BPE tokenizer.
 */
typedef struct gb_tokenizer gb_tokenizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *gb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gb_version(void);

/**
 * Loads a tokenizer from `vocab.txt` and `merges.txt` files.
 *
 * # Safety
 * Paths must be NUL-terminated; `out` must be writable.
 */
gb_status gb_tokenizer_load(const char *vocab_path, const char *merges_path, gb_tokenizer **out);

/**
 * Trains a BPE tokenizer on `n` sentences.
 *
 * # Safety
 * `lines` must hold `n` NUL-terminated strings; `out` must be writable.
 */
gb_status gb_tokenizer_train(const char *const *lines,
                             size_t n,
                             size_t vocab_size,
                             gb_tokenizer **out);

/**
 * Writes vocab and merges files.
 *
 * # Safety
 * `tok` must come from this library; paths must be NUL-terminated.
 */
gb_status gb_tokenizer_save(const gb_tokenizer *tok,
                            const char *vocab_path,
                            const char *merges_path);

/**
 * Number of tokens in the vocabulary, or 0 for a null handle.
 *
 * # Safety
 * `tok` must be null or come from this library.
 */
size_t gb_tokenizer_vocab_size(const gb_tokenizer *tok);

/**
 * Token ids of `text`. If `cap` is too small, returns `BufferTooSmall` and
 * sets `*out_len` to the needed length.
 *
 * # Safety
 * `ids` must hold `cap` elements; `out_len` must be writable.
 */
gb_status gb_tokenizer_encode(const gb_tokenizer *tok,
                              const char *input,
                              uint32_t *ids,
                              size_t cap,
                              size_t *out_len);

/**
 * Text of `n` ids as UTF-8 plus a trailing NUL. `*out_len` counts the bytes
 * without the NUL; `cap` must exceed it.
 *
 * # Safety
 * `ids` must hold `n` elements and `buf` `cap` bytes.
 */
gb_status gb_tokenizer_decode(const gb_tokenizer *tok,
                              const uint32_t *ids,
                              size_t n,
                              char *buf,
                              size_t cap,
                              size_t *out_len);

/**
 * # Safety
 * `tok` must be null or come from this library, and not be used afterwards.
 */
void gb_tokenizer_free(gb_tokenizer *tok);

/**
 * Loads a model directory: checkpoint files plus `vocab.txt` and `merges.txt`.
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` must be writable.
 */
gb_status gb_model_load(const char *dir, gb_model **out);

/**
 * Hidden size of the model, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t gb_model_dim(const gb_model *model);

/**
 * # Safety
 * `model` must be null or come from this library.
 */
size_t gb_model_num_parameters(const gb_model *model);

/**
 * Mean-pooled final hidden state of `text`, `dim` values.
 *
 * # Safety
 * `out` must hold `cap` doubles; `out_len` must be writable.
 */
gb_status gb_model_embed(const gb_model *model,
                         const char *input,
                         double *out,
                         size_t cap,
                         size_t *out_len);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used afterwards.
 */
void gb_model_free(gb_model *model);

/**
 * Support-weighted F1 over class ids `0..num_classes`.
 *
 * # Safety
 * `preds` and `golds` must hold `n` elements; `out` must be writable.
 */
gb_status gb_weighted_f1(const uint32_t *preds,
                         const uint32_t *golds,
                         size_t n,
                         uint32_t num_classes,
                         double *out);

/**
 * Truncated SVD of a row-major `rows`×`cols` matrix: `coords` receives
 * `rows`×`d` values, `primitives` `d`×`cols`. `singular_values` may be null,
 * otherwise it receives `min(rows, cols)` values.
 *
 * # Safety
 * All non-null buffers must have the sizes above.
 */
gb_status gb_factorize(const double *values,
                       size_t rows,
                       size_t cols,
                       size_t d,
                       double *coords,
                       double *primitives,
                       double *singular_values);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAFTBENCH_H */
