#ifndef EFA_H
#define EFA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EfaStatus {
  EFA_STATUS_OK = 0,
  EFA_STATUS_NULL_POINTER = 1,
  EFA_STATUS_INVALID_ARGUMENT = 2,
  EFA_STATUS_CONFIG = 3,
  EFA_STATUS_IO = 4,
  EFA_STATUS_PARSE = 5,
  EFA_STATUS_SHAPE = 6,
  EFA_STATUS_RUNTIME = 7,
  EFA_STATUS_PANIC = 8,
} EfaStatus;

typedef enum EfaMetric {
  EFA_METRIC_BLEU4 = 0,
  EFA_METRIC_METEOR = 1,
  EFA_METRIC_CIDER_D = 2,
  EFA_METRIC_ROUGE_L = 3,
} EfaMetric;

/**
 * Result of one assessment.
 */
typedef struct EfaAssessment EfaAssessment;

/**
 * A trained model with its encoders.
 */
typedef struct EfaModel EfaModel;

/**
 * Corpus statistics of a set of explanations.
 */
typedef struct EfaCorpusStats {
  size_t samples;
  double avg_words;
  double avg_sentences;
  size_t vocab_size;
  double avg_reasoning_steps;
  double avg_suggestions;
} EfaCorpusStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *efa_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *efa_version(void);

/**
 * Load a checkpoint file written by `efa train`.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum EfaStatus efa_model_load(const char *path, struct EfaModel **out);

/**
 * # Safety
 * `model` must come from [`efa_model_load`] and not be used afterwards. Null is ignored.
 */
void efa_model_free(struct EfaModel *model);

/**
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum EfaStatus efa_model_num_categories(const struct EfaModel *model, size_t *out);

/**
 * Width each visual token must have.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum EfaStatus efa_model_visual_dim(const struct EfaModel *model, size_t *out);

/**
 * Assess a video given as `rows x cols` row-major visual tokens.
 * `sample_key` only matters for the shuffled-text ablation and may be null.
 * `beam_width` 0 decodes greedily.
 *
 * # Safety
 * `features` must point to `rows * cols` doubles; `out` must be valid.
 */
enum EfaStatus efa_assess_features(const struct EfaModel *model,
                                   const double *features,
                                   size_t rows,
                                   size_t cols,
                                   const char *sample_key,
                                   uint32_t beam_width,
                                   struct EfaAssessment **out);

/**
 * Assess a video stored as a feature fixture file.
 *
 * # Safety
 * `model`, `path` and `out` must be valid pointers.
 */
enum EfaStatus efa_assess_fixture(const struct EfaModel *model,
                                  const char *path,
                                  uint32_t beam_width,
                                  struct EfaAssessment **out);

/**
 * # Safety
 * `a` must come from an assess call and not be used afterwards. Null is ignored.
 */
void efa_assessment_free(struct EfaAssessment *a);

/**
 * Predicted category id, or `usize::MAX` for a null handle.
 *
 * # Safety
 * `a` must be null or a live assessment.
 */
size_t efa_assessment_category(const struct EfaAssessment *a);

/**
 * Probability of standard execution, or NaN for a null handle.
 *
 * # Safety
 * `a` must be null or a live assessment.
 */
double efa_assessment_quality_prob(const struct EfaAssessment *a);

/**
 * 1 when judged standard, 0 when non-standard, -1 for a null handle.
 *
 * # Safety
 * `a` must be null or a live assessment.
 */
int32_t efa_assessment_is_standard(const struct EfaAssessment *a);

/**
 * Generated explanation, owned by the assessment. Null for a null handle.
 *
 * # Safety
 * `a` must be null or a live assessment; the string dies with it.
 */
const char *efa_assessment_explanation(const struct EfaAssessment *a);

/**
 * Copy category probabilities into `buf`. `written` receives the number of
 * categories; `buf` may be null to query it.
 *
 * # Safety
 * `buf` must hold `len` doubles when non-null.
 */
enum EfaStatus efa_assessment_category_probs(const struct EfaAssessment *a,
                                             double *buf,
                                             size_t len,
                                             size_t *written);

/**
 * The assessment as a JSON object. Release the string with [`efa_string_free`].
 *
 * # Safety
 * `a` and `out` must be valid pointers.
 */
enum EfaStatus efa_assessment_to_json(const struct EfaAssessment *a, char **out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void efa_string_free(char *s);

/**
 * Corpus-level caption metric of `n` hypothesis/reference pairs, on a 0..1
 * scale (CIDEr-D on its usual 0..10 scale).
 *
 * # Safety
 * `hyps` and `refs` must each point to `n` valid strings; `out` must be valid.
 */
enum EfaStatus efa_caption_metric(enum EfaMetric metric,
                                  const char *const *hyps,
                                  const char *const *refs,
                                  size_t n,
                                  double *out);

/**
 * Word, sentence, vocabulary and keyword statistics using the built-in keyword lists.
 *
 * # Safety
 * `texts` must point to `n` valid strings; `out` must be valid.
 */
enum EfaStatus efa_corpus_stats(const char *const *texts, size_t n, struct EfaCorpusStats *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EFA_H */
