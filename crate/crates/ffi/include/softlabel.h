/* C API for the soft-label multitask classification toolkit. */

#ifndef SOFTLABEL_H
#define SOFTLABEL_H

/* Generated by cbindgen from crates/ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Annotation attribute schemas addressable over the ABI.
 */
typedef enum SlAttribute {
  /*
   3 categories: not, somewhat, very.
   */
  SlAggression = 0,
  /*
   2 categories: na, anti_asian.
   */
  SlTargetBinary = 1,
  /*
   4 categories: na, anti_asian, anti_black, both.
   */
  SlTargetFour = 2,
  /*
   3 categories: normal, abusive, hate.
   */
  SlType = 3,
} SlAttribute;

/*
 Status codes returned by every API call.
 */
typedef enum SlStatus {
  /*
   Success.
   */
  SlOk = 0,
  /*
   A required pointer argument was null.
   */
  SlNullPointer = 1,
  /*
   A string argument was not valid UTF-8.
   */
  SlInvalidUtf8 = 2,
  /*
   Invalid argument or malformed data.
   */
  SlInvalidArgument = 3,
  /*
   Numeric failure (non-finite value).
   */
  SlNumericError = 4,
  /*
   The requested quantity is undefined for this input (e.g. chance
   agreement of exactly 1 for Fleiss' kappa).
   */
  SlUndefined = 5,
  /*
   Internal panic; state may be inconsistent.
   */
  SlInternal = 6,
} SlStatus;

/*
 Opaque phrase-list handle.
 */
typedef struct SlPhraseLists SlPhraseLists;

/*
 Opaque hashtag-segmenter handle.
 */
typedef struct SlSegmenter SlSegmenter;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Builds a phrase-list handle from newline-separated phrase blocks.
 `tracking` may be null for no hashtag-retention keywords.

 # Safety
 `anti_asian` and `anti_black` must be valid NUL-terminated strings;
 `out` must be a valid pointer.
 */
enum SlStatus sl_phrase_lists_new(const char *anti_asian,
                                  const char *anti_black,
                                  const char *tracking,
                                  struct SlPhraseLists **out);

/*
 # Safety
 `handle` must come from `sl_phrase_lists_new` and not be freed twice.
 */
void sl_phrase_lists_free(struct SlPhraseLists *handle);

/*
 Returns the built-in word-frequency segmenter.

 # Safety
 `out` must be a valid pointer.
 */
enum SlStatus sl_segmenter_new_bundled(struct SlSegmenter **out);

/*
 # Safety
 `handle` must come from `sl_segmenter_new_bundled` and not be freed twice.
 */
void sl_segmenter_free(struct SlSegmenter *handle);

/*
 Normalizes one raw tweet into cleaned, space-separated tokens. On success
 `*out` receives a NUL-terminated string owned by the library; release it
 with `sl_string_free`.

 # Safety
 All pointers must be valid; handles must be live.
 */
enum SlStatus sl_normalize_tweet(const struct SlPhraseLists *lists,
                                 const struct SlSegmenter *segmenter,
                                 const char *raw_text,
                                 char **out);

/*
 Releases a string produced by this library.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void sl_string_free(char *s);

/*
 Assigns a tweet to a keyword category by phrase matching on the raw text.
 `*out_category`: 0 = anti-Asian, 1 = anti-Black, 2 = interracial, 3 = normal.

 # Safety
 All pointers must be valid; `lists` must be live.
 */
enum SlStatus sl_categorize_tweet(const struct SlPhraseLists *lists,
                                  const char *raw_text,
                                  int *out_category);

/*
 Aggregates per-category vote counts for one attribute into a soft-label
 distribution, a majority-vote silver label (schema tie default on ties),
 and an agreement class (0 = unanimous, 1 = two distinct, 2 = all distinct).

 `counts` has one entry per category of `attribute`; `out_soft` must hold
 the same number of doubles.

 # Safety
 All pointers must be valid for the schema's category count.
 */
enum SlStatus sl_aggregate_votes(enum SlAttribute attribute,
                                 const uint32_t *counts,
                                 size_t num_categories,
                                 double *out_soft,
                                 size_t *out_silver,
                                 int *out_class);

/*
 Fleiss' kappa over `num_rows x num_categories` vote counts (row-major),
 each row summing to `annotators`. Returns `SlUndefined` when chance
 agreement is exactly 1 (every vote in a single category).

 # Safety
 `rows` must hold `num_rows * num_categories` entries; `out_kappa` must be
 a valid pointer.
 */
enum SlStatus sl_fleiss_kappa(const uint32_t *rows,
                              size_t num_rows,
                              size_t num_categories,
                              size_t annotators,
                              double *out_kappa);

/*
 Inverse-frequency class weights: `w_c = total / (num_classes * count_c)`.
 Every count must be positive. `out_weights` must hold `len` doubles.

 # Safety
 `counts` and `out_weights` must be valid for `len` entries.
 */
enum SlStatus sl_class_weights(const uint32_t *counts, size_t len, double *out_weights);

/*
 Majority vote over per-seed category predictions for one tweet. Ties go to
 the least severe (lowest-index) category among the tied leaders.
 `*out_tie_kind`: 0 = no tie, 1 = two-way, 2 = three-way.

 # Safety
 `votes` must hold `len` entries; out-pointers must be valid.
 */
enum SlStatus sl_ensemble_vote(const size_t *votes,
                               size_t len,
                               size_t num_categories,
                               size_t *out_winner,
                               int *out_tie_kind);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTLABEL_H */
