#ifndef MOODTUNE_H
#define MOODTUNE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Number of emotion labels; probability arrays have this many entries.
#define MT_NUM_EMOTIONS 5

// Result of every fallible call.
typedef enum MtStatus {
  MT_STATUS_OK = 0,
  MT_STATUS_NULL_POINTER = 1,
  MT_STATUS_INVALID_ARGUMENT = 2,
  MT_STATUS_IO = 3,
  MT_STATUS_CORRUPT = 4,
  MT_STATUS_NOT_FOUND = 5,
  MT_STATUS_INTERNAL = 6,
} MtStatus;

// A loaded classifier checkpoint.
typedef struct MtClassifier MtClassifier;

// A ledger backed by a JSON-lines chain file.
typedef struct MtLedger MtLedger;

// A catalog plus its feedback history.
typedef struct MtRecommender MtRecommender;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Owned by the
// library; valid until the next call on the same thread.
const char *mt_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void mt_string_free(char *s);

// Lowercase name of label `index` (0 = happy … 4 = neutral), or null when
// out of range. The string is static.
const char *mt_emotion_name(uint32_t index);

// Labels at or above `threshold` (argmax when none), most probable first.
// Writes up to 5 label indices to `out_labels` and their count to
// `out_count`.
//
// # Safety
// `probs` points to 5 doubles; `out_labels` has room for 5 entries.
enum MtStatus mt_mood_report(const double *probs,
                             double threshold,
                             uint32_t *out_labels,
                             size_t *out_count);

// Loads a classifier checkpoint (lyrics or mood image).
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum MtStatus mt_classifier_load(const char *path, struct MtClassifier **out);

// # Safety
// `h` comes from [`mt_classifier_load`] and is not used afterwards.
void mt_classifier_free(struct MtClassifier *h);

// Emotion distribution of a lyric text; writes 5 doubles.
//
// # Safety
// `h` is a live classifier, `lyrics` NUL-terminated, `out_probs` has room
// for 5 doubles.
enum MtStatus mt_classifier_classify_lyrics(const struct MtClassifier *h,
                                            const char *lyrics,
                                            double *out_probs);

// Emotion distribution of a 48×48 PGM image given as raw file bytes.
//
// # Safety
// `pgm` points to `len` readable bytes; `out_probs` has room for 5 doubles.
enum MtStatus mt_classifier_classify_pgm(const struct MtClassifier *h,
                                         const uint8_t *pgm,
                                         size_t len,
                                         double *out_probs);

// Loads a JSON-lines catalog with an empty feedback history.
//
// # Safety
// `catalog_path` is NUL-terminated; `out` is writable.
enum MtStatus mt_recommender_open(const char *catalog_path,
                                  double blend,
                                  struct MtRecommender **out);

// # Safety
// `h` comes from [`mt_recommender_open`] and is not used afterwards.
void mt_recommender_free(struct MtRecommender *h);

// Records one like (`like != 0`) or skip. Timestamps per user must not go
// backwards.
//
// # Safety
// `h` is live; strings are NUL-terminated.
enum MtStatus mt_recommender_add_feedback(struct MtRecommender *h,
                                          const char *user_id,
                                          const char *song_id,
                                          int32_t like,
                                          int64_t timestamp);

// Top-`k` songs for `user_id` in mood `probs` as a JSON array of
// `{song_id, score, components}`. Free the result with [`mt_string_free`].
//
// # Safety
// `h` is live, `probs` points to 5 doubles, `out_json` is writable.
enum MtStatus mt_recommender_recommend(const struct MtRecommender *h,
                                       const char *user_id,
                                       const double *probs,
                                       size_t k,
                                       double alpha,
                                       double beta,
                                       double gamma,
                                       char **out_json);

// Opens (or creates) a chain file; fails with `Corrupt` if it does not
// verify.
//
// # Safety
// `path` is NUL-terminated; `out` is writable.
enum MtStatus mt_ledger_open(const char *path, struct MtLedger **out);

// # Safety
// `h` comes from [`mt_ledger_open`] and is not used afterwards.
void mt_ledger_free(struct MtLedger *h);

// Appends one token_reward block.
//
// # Safety
// `h` is live; strings are NUL-terminated.
enum MtStatus mt_ledger_award_tokens(struct MtLedger *h,
                                     const char *user_id,
                                     int64_t amount,
                                     const char *reason);

// # Safety
// `h` is live; `user_id` NUL-terminated; `out_balance` writable.
enum MtStatus mt_ledger_balance(const struct MtLedger *h,
                                const char *user_id,
                                int64_t *out_balance);

// Number of blocks in the chain.
//
// # Safety
// `h` is live; `out_len` writable.
enum MtStatus mt_ledger_len(const struct MtLedger *h, size_t *out_len);

// Verifies a chain file on disk. `out_ok` is 1 when every hash and link
// checks out; otherwise 0 and `out_first_bad` holds the first bad block
// index (it is -1 when the chain is sound).
//
// # Safety
// `path` is NUL-terminated; outputs are writable.
enum MtStatus mt_ledger_verify_file(const char *path, int32_t *out_ok, int64_t *out_first_bad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOODTUNE_H */
