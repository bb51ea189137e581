#ifndef CLINQA_H
#define CLINQA_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ClinqaStatus {
  CLINQA_STATUS_OK = 0,
  CLINQA_STATUS_NULL_POINTER = 1,
  CLINQA_STATUS_INVALID_UTF8 = 2,
  CLINQA_STATUS_CONFIG = 3,
  CLINQA_STATUS_IO = 4,
  CLINQA_STATUS_INTEGRITY = 5,
  CLINQA_STATUS_INVARIANT = 6,
  CLINQA_STATUS_ENCODING = 7,
  CLINQA_STATUS_DECODE = 8,
  CLINQA_STATUS_INTERNAL = 9,
} ClinqaStatus;

/**
 * Opaque handle to a loaded model directory.
 */
typedef struct ClinqaPredictor ClinqaPredictor;

/**
 * Answer span returned by [`clinqa_predictor_answer`]. `text` is owned by
 * the caller; release it with [`clinqa_answer_clear`].
 */
typedef struct ClinqaAnswer {
  char *text;
  /**
   * Byte offsets into the context.
   */
  size_t char_start;
  size_t char_end;
  uint32_t lf_id;
} ClinqaAnswer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread; do not free.
 */
const char *clinqa_last_error(void);

/**
 * Library version as a static string; do not free.
 */
const char *clinqa_version(void);

/**
 * Loads a saved model directory into `*out`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ClinqaStatus clinqa_predictor_load(const char *dir, struct ClinqaPredictor **out);

/**
 * # Safety
 * `p` must be null or a handle from [`clinqa_predictor_load`] not yet freed.
 */
void clinqa_predictor_free(struct ClinqaPredictor *p);

/**
 * Extracts the answer to `question` from `context`.
 *
 * # Safety
 * `p` must be a live handle, the strings NUL-terminated, `out` valid.
 */
enum ClinqaStatus clinqa_predictor_answer(const struct ClinqaPredictor *p,
                                          const char *question,
                                          const char *context,
                                          struct ClinqaAnswer *out);

/**
 * Frees the answer text and nulls the pointer.
 *
 * # Safety
 * `a` must be null or point to an answer filled by this library.
 */
void clinqa_answer_clear(struct ClinqaAnswer *a);

/**
 * Token-overlap F1 between two answers after normalization.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` valid.
 */
enum ClinqaStatus clinqa_token_f1(const char *pred, const char *gold, double *out);

/**
 * 1.0 when the normalized answers are identical, else 0.0.
 *
 * # Safety
 * Strings must be NUL-terminated; `out` valid.
 */
enum ClinqaStatus clinqa_exact_match(const char *pred, const char *gold, double *out);

/**
 * Tokens of a logical form as a JSON array string in `*out`.
 *
 * # Safety
 * `lf` must be NUL-terminated; `out` valid. Free `*out` with
 * [`clinqa_string_free`].
 */
enum ClinqaStatus clinqa_lf_tokenize(const char *lf, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void clinqa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CLINQA_H */
