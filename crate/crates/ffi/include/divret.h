#ifndef DIVRET_H
#define DIVRET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DivretStatus {
  DIVRET_STATUS_OK = 0,
  DIVRET_STATUS_NULL_POINTER = 1,
  DIVRET_STATUS_INVALID_UTF8 = 2,
  DIVRET_STATUS_IO = 3,
  DIVRET_STATUS_PARSE = 4,
  DIVRET_STATUS_INVALID = 5,
  DIVRET_STATUS_PANIC = 6,
} DivretStatus;

/**
 * Opaque BM25 index.
 */
typedef struct DivretIndex DivretIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * owned by the library and valid until the next call on the same thread.
 */
const char *divret_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void divret_string_free(char *s);

/**
 * Builds a BM25 index over a passage JSONL file.
 *
 * # Safety
 * `corpus_path` must be a valid C string; `out` a valid pointer.
 */
enum DivretStatus divret_index_build(const char *corpus_path,
                                     double k1,
                                     double b,
                                     struct DivretIndex **out);

/**
 * Loads an index written by `divret index build` or [`divret_index_save`].
 *
 * # Safety
 * `path` must be a valid C string; `out` a valid pointer.
 */
enum DivretStatus divret_index_load(const char *path, struct DivretIndex **out);

/**
 * # Safety
 * `index` must be a live handle; `path` a valid C string.
 */
enum DivretStatus divret_index_save(const struct DivretIndex *index, const char *path);

/**
 * Number of indexed passages.
 *
 * # Safety
 * `index` must be a live handle; `out` a valid pointer.
 */
enum DivretStatus divret_index_len(const struct DivretIndex *index, size_t *out);

/**
 * Top-`k` search. `out_json` receives a ranked-list object
 * `{"question_id", "retriever_id", "entries": [{"doc_id", "score"}]}`.
 *
 * # Safety
 * `index` must be a live handle; strings valid; `out_json` a valid pointer.
 */
enum DivretStatus divret_index_search(const struct DivretIndex *index,
                                      const char *question_id,
                                      const char *query,
                                      size_t k,
                                      char **out_json);

/**
 * # Safety
 * `index` must come from this library and not have been freed. Null is ignored.
 */
void divret_index_free(struct DivretIndex *index);

/**
 * MRecall@k of a row-major `n_docs × m` 0/1 matrix in rank order.
 *
 * # Safety
 * `cells` must point to `n_docs * m` bytes; `out` a valid pointer.
 */
enum DivretStatus divret_mrecall_at_k(const uint8_t *cells,
                                      size_t n_docs,
                                      size_t m,
                                      size_t k,
                                      uint8_t *out);

/**
 * Precision@k of a row-major `n_docs × m` 0/1 matrix in rank order.
 *
 * # Safety
 * `cells` must point to `n_docs * m` bytes; `out` a valid pointer.
 */
enum DivretStatus divret_precision_at_k(const uint8_t *cells,
                                        size_t n_docs,
                                        size_t m,
                                        size_t k,
                                        double *out);

/**
 * Splits `text` into `window`-word passages; `out_json` receives a passage array.
 *
 * # Safety
 * Strings must be valid C strings; `out_json` a valid pointer.
 */
enum DivretStatus divret_segment(const char *text,
                                 const char *parent_id,
                                 size_t window,
                                 char **out_json);

/**
 * Round-robin merge with dedup of a JSON array of ranked lists.
 *
 * # Safety
 * `lists_json` must be a valid C string; `out_json` a valid pointer.
 */
enum DivretStatus divret_round_robin_merge(const char *lists_json, size_t k, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIVRET_H */
