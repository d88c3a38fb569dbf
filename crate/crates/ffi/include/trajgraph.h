/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef TRAJGRAPH_H
#define TRAJGRAPH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Sentinel written by [`tg_greedy_match`] for unmatched treated units.
 */
#define TG_UNMATCHED ~0

/**
 * Result code of every fallible call.
 */
typedef enum TgStatus {
  TG_STATUS_OK = 0,
  /**
   * Null pointer, bad length or non-UTF-8 string.
   */
  TG_STATUS_INVALID_ARGUMENT = 1,
  TG_STATUS_INVALID_INPUT = 2,
  TG_STATUS_CONFIG = 3,
  /**
   * The statistic is undefined for the data, e.g. AUC with one class.
   */
  TG_STATUS_UNDEFINED = 4,
  TG_STATUS_BACKEND = 5,
  TG_STATUS_IO = 6,
  TG_STATUS_PARSE = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  TG_STATUS_PANIC = 8,
} TgStatus;

/**
 * Trained fold ensemble.
 */
typedef struct TgEnsemble TgEnsemble;

/**
 * Loaded knowledge base.
 */
typedef struct TgKnowledgeBase TgKnowledgeBase;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tg_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *tg_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void tg_string_free(char *s);

/**
 * Area under the ROC curve, ties counted half.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements.
 */
enum TgStatus tg_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Demographic parity difference between members (`in_group != 0`) and the rest.
 *
 * # Safety
 * The three arrays must hold `n` readable elements.
 */
enum TgStatus tg_dpd(const uint8_t *y_true,
                     const uint8_t *y_pred,
                     const uint8_t *in_group,
                     size_t n,
                     double *out);

/**
 * Equal opportunity difference between members and the rest.
 *
 * # Safety
 * The three arrays must hold `n` readable elements.
 */
enum TgStatus tg_eod(const uint8_t *y_true,
                     const uint8_t *y_pred,
                     const uint8_t *in_group,
                     size_t n,
                     double *out);

/**
 * Greedy 1:1 nearest-neighbour matching without replacement.
 * `out_control[i]` receives the control index for treated `i`, or
 * `TG_UNMATCHED`. A nonzero `descending` processes treated units by
 * decreasing score instead of input order.
 *
 * # Safety
 * `treated` has `n_treated` elements, `controls` has `n_controls`, and
 * `out_control` has room for `n_treated`.
 */
enum TgStatus tg_greedy_match(const double *treated,
                              size_t n_treated,
                              const double *controls,
                              size_t n_controls,
                              int32_t descending,
                              size_t *out_control);

/**
 * Standardized mean difference with the pooled sample standard deviation.
 *
 * # Safety
 * `treated` has `n_treated` elements and `controls` has `n_controls`.
 */
enum TgStatus tg_smd(const double *treated,
                     size_t n_treated,
                     const double *controls,
                     size_t n_controls,
                     double *out);

/**
 * Top-k confidence-weighted vote over `n` reasoning paths. `predictions[i]`
 * is nonzero for a positive path and `confidences[i]` is its verifier score.
 *
 * # Safety
 * Both arrays hold `n` elements; the outputs are writable.
 */
enum TgStatus tg_aggregate(const uint8_t *predictions,
                           const double *confidences,
                           size_t n,
                           size_t k,
                           uint8_t *out_label,
                           double *out_confidence);

/**
 * The bundled toy knowledge base and lexicon.
 *
 * # Safety
 * `out` must be writable.
 */
enum TgStatus tg_kb_toy(struct TgKnowledgeBase **out);

/**
 * Load a knowledge base JSON bundle and a lexicon TSV. A null
 * `lexicon_path` selects the bundled toy lexicon.
 *
 * # Safety
 * Paths are NUL-terminated strings; `out` must be writable.
 */
enum TgStatus tg_kb_load(const char *kb_path,
                         const char *lexicon_path,
                         struct TgKnowledgeBase **out);

/**
 * # Safety
 * `kb` must come from `tg_kb_toy` or `tg_kb_load`, or be null.
 */
void tg_kb_free(struct TgKnowledgeBase *kb);

/**
 * # Safety
 * `kb` must be a live handle and `out` writable.
 */
enum TgStatus tg_kb_concept_count(const struct TgKnowledgeBase *kb, size_t *out);

/**
 * Reduce one note extraction (JSON) into an augmented visit graph (JSON).
 * A nonzero `international` reads numeric dates as day/month/year. The
 * result is released with `tg_string_free`.
 *
 * # Safety
 * `kb` must be a live handle, `note_json` a NUL-terminated string and
 * `out_graph_json` writable.
 */
enum TgStatus tg_note_to_graph(const struct TgKnowledgeBase *kb,
                               const char *note_json,
                               int32_t international,
                               char **out_graph_json);

/**
 * Load a trained ensemble directory.
 *
 * # Safety
 * `dir` is a NUL-terminated string and `out` writable.
 */
enum TgStatus tg_ensemble_load(const char *dir, struct TgEnsemble **out);

/**
 * # Safety
 * `e` must come from `tg_ensemble_load`, or be null.
 */
void tg_ensemble_free(struct TgEnsemble *e);

/**
 * # Safety
 * `e` must be a live handle and `out` writable.
 */
enum TgStatus tg_ensemble_member_count(const struct TgEnsemble *e, size_t *out);

/**
 * Score every patient of a feature file, in file order. `out_n` receives
 * the patient count; when it exceeds `capacity` nothing is written to
 * `out_scores` and `InvalidArgument` is returned, so callers can size a
 * buffer by calling once with `capacity = 0`.
 *
 * # Safety
 * `e` is a live handle, `features_path` NUL-terminated, `out_scores` has
 * room for `capacity` doubles and `out_n` is writable.
 */
enum TgStatus tg_ensemble_predict(const struct TgEnsemble *e,
                                  const char *features_path,
                                  double *out_scores,
                                  size_t capacity,
                                  size_t *out_n);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJGRAPH_H */
