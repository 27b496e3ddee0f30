#ifndef BIASMINE_H
#define BIASMINE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BmStatus {
  BM_STATUS_OK = 0,
  BM_STATUS_NULL_ARGUMENT = 1,
  BM_STATUS_INVALID_ARGUMENT = 2,
  BM_STATUS_IO = 3,
  BM_STATUS_DATA = 4,
  BM_STATUS_PANIC = 5,
} BmStatus;

typedef struct BmCodebook BmCodebook;

typedef struct BmDatabase BmDatabase;

typedef struct BmRuleSet BmRuleSet;

// Inclusive cell bounds of a crop.
typedef struct BmBox {
  size_t top;
  size_t left;
  size_t bottom;
  size_t right;
} BmBox;

// Counts of one rule; confidence is `support / antecedent_support`.
typedef struct BmRule {
  uint64_t support;
  uint64_t antecedent_support;
  size_t antecedent_len;
  size_t consequent_len;
} BmRule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *bm_last_error(void);

void bm_string_free(char *s);

// Number of axis-aligned boxes on an `m` by `n` grid.
enum BmStatus bm_num_bboxes(size_t m, size_t n, uint64_t *count);

// Smallest box holding at least `tau` of the mass of a row-major grid.
enum BmStatus bm_min_enclosing_box(const double *values,
                                   size_t rows,
                                   size_t cols,
                                   double tau,
                                   struct BmBox *result);

// Codebook from `k * dim` row-major centroid values.
enum BmStatus bm_codebook_new(const double *centroids,
                              size_t k,
                              size_t dim,
                              struct BmCodebook **codebook);

enum BmStatus bm_codebook_load(const char *path, struct BmCodebook **codebook);

enum BmStatus bm_codebook_save(const struct BmCodebook *codebook, const char *path);

size_t bm_codebook_k(const struct BmCodebook *codebook);

size_t bm_codebook_dim(const struct BmCodebook *codebook);

// Nearest centroid by squared distance; ties go to the smallest index.
enum BmStatus bm_codebook_assign(const struct BmCodebook *codebook,
                                 const double *feature,
                                 size_t len,
                                 uint32_t *codeword);

void bm_codebook_free(struct BmCodebook *codebook);

enum BmStatus bm_db_load(const char *path, struct BmDatabase **db);

size_t bm_db_transaction_count(const struct BmDatabase *db);

size_t bm_db_item_count(const struct BmDatabase *db);

void bm_db_free(struct BmDatabase *db);

// Mines rules from `db`. `support` uses the CLI syntax ("30", "5%",
// "0.05"). With `filter` set, only question/image to answer rules are kept.
enum BmStatus bm_mine_rules(const struct BmDatabase *db,
                            const char *support,
                            double min_confidence,
                            bool filter,
                            struct BmRuleSet **rules);

size_t bm_ruleset_len(const struct BmRuleSet *rules);

// Counts of the rule at `index` in canonical order.
enum BmStatus bm_ruleset_get(const struct BmRuleSet *rules, size_t index, struct BmRule *rule);

// Table row of the rule at `index`, e.g. "what sport | v:1 | tennis* | 40 | 0.62".
enum BmStatus bm_ruleset_row(const struct BmRuleSet *rules, size_t index, char **text);

// Whole rule set rendered as "table" or "structured".
enum BmStatus bm_ruleset_render(const struct BmRuleSet *rules, const char *format, char **text);

void bm_ruleset_free(struct BmRuleSet *rules);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIASMINE_H */
