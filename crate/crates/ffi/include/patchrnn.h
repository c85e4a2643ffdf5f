#ifndef PATCHRNN_H
#define PATCHRNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum {
  PRNN_STATUS_OK = 0,
  PRNN_STATUS_NULL_ARGUMENT = 1,
  PRNN_STATUS_INVALID_UTF8 = 2,
  PRNN_STATUS_IO = 3,
  PRNN_STATUS_CHECKPOINT = 4,
  PRNN_STATUS_PARSE = 5,
  PRNN_STATUS_MODEL = 6,
  PRNN_STATUS_INVALID_ARGUMENT = 7,
  PRNN_STATUS_PANIC = 8,
} PrnnStatus;

typedef enum {
  PRNN_LABEL_NON_SECURITY = 0,
  PRNN_LABEL_SECURITY = 1,
} PrnnLabel;

/**
 * Opaque model handle.
 */
typedef struct PrnnModel PrnnModel;

typedef struct {
  PrnnLabel label;
  /**
   * Probability of the security class.
   */
  double probability;
} PrnnPrediction;

/**
 * Undefined ratios (zero denominators) are NaN.
 */
typedef struct {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double fpr;
  double fnr;
} PrnnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *prnn_last_error(void);

/**
 * Load a checkpoint from `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
PrnnStatus prnn_model_load(const char *path, PrnnModel **out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`prnn_model_load`] and not be used afterwards.
 */
void prnn_model_free(PrnnModel *model);

/**
 * Version string `patchrnn-<version>+<fingerprint>` of a loaded model.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
PrnnStatus prnn_model_version(const PrnnModel *model, char **out);

/**
 * Classify one patch given as `len` bytes of `git format-patch` text.
 *
 * # Safety
 * `model` must be a live handle, `patch` must point to `len` readable bytes,
 * and `out` must be a valid pointer.
 */
PrnnStatus prnn_predict(const PrnnModel *model,
                        const uint8_t *patch,
                        size_t len,
                        PrnnPrediction *out);

/**
 * Tokenize C/C++ source: one `kind<TAB>text` line per token.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
PrnnStatus prnn_lex(const char *source, char **out);

/**
 * Commit message to space-separated stems.
 *
 * # Safety
 * `message` must be a NUL-terminated string and `out` a valid pointer.
 */
PrnnStatus prnn_message_stems(const char *message, char **out);

/**
 * Release a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void prnn_string_free(char *s);

/**
 * Rates of a confusion matrix.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
PrnnStatus prnn_compute_metrics(uint64_t tp,
                                uint64_t fp,
                                uint64_t tn,
                                uint64_t fn_,
                                PrnnMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATCHRNN_H */
