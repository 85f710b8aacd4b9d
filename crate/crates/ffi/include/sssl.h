/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SSSL_H
#define SSSL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function.
typedef enum SsslStatus {
  SSSL_STATUS_OK = 0,
  SSSL_STATUS_NULL_POINTER = 1,
  SSSL_STATUS_INVALID_UTF8 = 2,
  SSSL_STATUS_INVALID_INPUT = 3,
  SSSL_STATUS_IO = 4,
  SSSL_STATUS_PARSE = 5,
  SSSL_STATUS_CONFIG = 6,
  SSSL_STATUS_PROVIDER = 7,
  SSSL_STATUS_EMPTY_REPOSITORY = 8,
  SSSL_STATUS_INTERNAL = 99,
} SsslStatus;

// Loaded, validated repository snapshot.
typedef struct SsslRepository SsslRepository;

// Configuration plus the embedding and annotation backends it describes.
typedef struct SsslSession SsslSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *sssl_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string returned by this library and not yet freed.
void sssl_string_free(char *s);

// Loads a repository JSONL file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SsslStatus sssl_repository_open(const char *path, struct SsslRepository **out);

// # Safety
// `repo` must be null or a handle from [`sssl_repository_open`] not yet freed.
void sssl_repository_free(struct SsslRepository *repo);

// Number of entries.
//
// # Safety
// `repo` must be a live handle; `out` must be writable.
enum SsslStatus sssl_repository_len(const struct SsslRepository *repo, size_t *out);

// Number of distinct labels in the inventory.
//
// # Safety
// `repo` must be a live handle; `out` must be writable.
enum SsslStatus sssl_repository_label_count(const struct SsslRepository *repo, size_t *out);

// Opens a session from a JSON configuration file, or with defaults when
// `config_path` is null.
//
// # Safety
// `config_path` must be null or a NUL-terminated string; `out` must be
// writable.
enum SsslStatus sssl_session_new(const char *config_path, struct SsslSession **out);

// # Safety
// `session` must be null or a handle from [`sssl_session_new`] not yet freed.
void sssl_session_free(struct SsslSession *session);

// Predicts labels for one question; writes the prediction JSON to `out_json`.
//
// # Safety
// Handles must be live; strings NUL-terminated; `out_json` writable.
enum SsslStatus sssl_predict_json(const struct SsslSession *session,
                                  const struct SsslRepository *repo,
                                  const char *id,
                                  const char *question,
                                  char **out_json);

// Ranks repository questions for `query`. `method` is `labels`, `dense` or
// `bm25`; `aggregation` is `mean`, `max` or null for the configured default.
//
// # Safety
// Handles must be live; strings NUL-terminated (or null where allowed);
// `out_json` writable.
enum SsslStatus sssl_retrieve_json(const struct SsslSession *session,
                                   const struct SsslRepository *repo,
                                   const char *query,
                                   const char *method,
                                   const char *aggregation,
                                   size_t top,
                                   char **out_json);

// Cosine similarity of two `len`-long vectors.
//
// # Safety
// `a` and `b` must point to `len` readable doubles; `out` must be writable.
enum SsslStatus sssl_cosine_similarity(const double *a, const double *b, size_t len, double *out);

// Deterministic offline embedding of `text` into `dims` doubles.
//
// # Safety
// `text` must be NUL-terminated; `out` must have room for `dims` doubles.
enum SsslStatus sssl_stub_embed(const char *text_ptr, size_t dims, double *out);

// Knee index of a non-increasing curve, or -1 when there is none.
//
// # Safety
// `curve` must point to `len` readable doubles (or be null with `len` 0);
// `out_index` must be writable.
enum SsslStatus sssl_detect_knee(const double *curve,
                                 size_t len,
                                 double sensitivity,
                                 int64_t *out_index);

// Saves the session's embedding cache if one is configured.
//
// # Safety
// `session` must be a live handle.
enum SsslStatus sssl_session_save_cache(const struct SsslSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSSL_H */
