#ifndef ENTEX_H
#define ENTEX_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ENTEX_PERSON_HOBBY 0

#define ENTEX_PERSON_ORG 1

#define ENTEX_SPOUSE_HOBBY 2

#define ENTEX_SPOUSE_ORG 3

/**
 * Category selector for corpus-level scores.
 */
#define ENTEX_OVERALL 4

typedef enum {
  ENTEX_STATUS_OK = 0,
  ENTEX_STATUS_NULL_ARGUMENT = 1,
  ENTEX_STATUS_INVALID_UTF8 = 2,
  ENTEX_STATUS_INVALID_ARGUMENT = 3,
  ENTEX_STATUS_FORMAT_ERROR = 4,
  ENTEX_STATUS_IO_ERROR = 5,
  ENTEX_STATUS_NOT_FOUND = 6,
  ENTEX_STATUS_PANIC = 7,
} EntexStatus;

/**
 * Parsed entities of one interview.
 */
typedef struct EntexExtraction EntexExtraction;

/**
 * An evaluation report.
 */
typedef struct EntexReport EntexReport;

/**
 * Counts and percentages; undefined percentages are NaN.
 */
typedef struct {
  size_t tp;
  size_t fp;
  size_t fn_;
  double precision;
  double recall;
  double f1;
} EntexScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *entex_last_error_message(void);

/**
 * Indel similarity of two strings after case folding, in [0, 1].
 *
 * # Safety
 * `a` and `b` are NUL-terminated strings; `out` is writable.
 */
EntexStatus entex_indel_similarity(const char *a, const char *b, double *out);

/**
 * Parses a response for one interview. `spouse_name` may be null.
 *
 * # Safety
 * String arguments are NUL-terminated; `out` is writable. On success `*out`
 * holds a handle to release with [`entex_extraction_free`].
 */
EntexStatus entex_parse_response(const char *text,
                                 const char *interview_id,
                                 const char *primary_name,
                                 const char *spouse_name,
                                 EntexExtraction **out);

/**
 * Number of entities in `category`; 0 for a null handle or unknown category.
 *
 * # Safety
 * `x` is null or a live handle.
 */
size_t entex_extraction_count(const EntexExtraction *x, uint32_t category);

/**
 * Entity `index` of `category`, borrowed from the handle; null if out of range.
 *
 * # Safety
 * `x` is null or a live handle.
 */
const char *entex_extraction_entity(const EntexExtraction *x, uint32_t category, size_t index);

/**
 * # Safety
 * `x` is null or a handle from [`entex_parse_response`] not yet freed.
 */
void entex_extraction_free(EntexExtraction *x);

/**
 * Locates `entity` in `text` by approximate matching on token boundaries.
 * Returns `ENTEX_STATUS_NOT_FOUND` when no span reaches `threshold`.
 *
 * # Safety
 * `text` and `entity` are NUL-terminated; the out pointers are writable.
 */
EntexStatus entex_align_entity(const char *text,
                               const char *entity,
                               double threshold,
                               size_t *start,
                               size_t *end,
                               double *similarity);

/**
 * Evaluates a prediction file against a gold file, both JSONL.
 *
 * # Safety
 * Paths are NUL-terminated; `out` is writable. On success `*out` holds a
 * handle to release with [`entex_report_free`].
 */
EntexStatus entex_evaluate_files(const char *gold_path,
                                 const char *pred_path,
                                 double threshold,
                                 EntexReport **out);

/**
 * Scores for one category, or the corpus with `ENTEX_OVERALL`.
 *
 * # Safety
 * `r` is null or a live handle; `out` is writable.
 */
EntexStatus entex_report_scores(const EntexReport *r, uint32_t category, EntexScores *out);

/**
 * The report as JSON; release with [`entex_string_free`]. Null on failure.
 *
 * # Safety
 * `r` is null or a live handle.
 */
char *entex_report_to_json(const EntexReport *r);

/**
 * # Safety
 * `r` is null or a handle from [`entex_evaluate_files`] not yet freed.
 */
void entex_report_free(EntexReport *r);

/**
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void entex_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ENTEX_H */
