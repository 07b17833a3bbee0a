#ifndef MTFOREST_H
#define MTFOREST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. The nonzero values below 5 match the CLI exit codes.
 */
typedef enum {
  MTF_STATUS_OK = 0,
  MTF_STATUS_CONFIG = 2,
  MTF_STATUS_DATA = 3,
  MTF_STATUS_NUMERIC = 4,
  /**
   * Null pointer, bad UTF-8 or a too small output buffer.
   */
  MTF_STATUS_INVALID_ARGUMENT = 5,
  MTF_STATUS_INTERNAL = 6,
} MtfStatus;

/**
 * A loaded dataset.
 */
typedef struct MtfDataset MtfDataset;

/**
 * A fitted forest.
 */
typedef struct MtfForest MtfForest;

/**
 * A fitted policy tree.
 */
typedef struct MtfPolicyTree MtfPolicyTree;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *mtf_last_error(void);

/**
 * Library version as a static string.
 */
const char *mtf_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void mtf_string_free(char *s);

/**
 * Runs the full pipeline from a JSON config string into `out_dir`.
 *
 * # Safety
 * Both arguments must be valid nul-terminated strings.
 */
MtfStatus mtf_run_pipeline(const char *config_json, const char *out_dir);

/**
 * Loads a CSV with its schema sidecar.
 *
 * # Safety
 * Paths must be valid strings and `out` a valid pointer.
 */
MtfStatus mtf_dataset_load(const char *csv_path, const char *schema_path, MtfDataset **out);

/**
 * # Safety
 * `d` must be null or a handle from [`mtf_dataset_load`].
 */
void mtf_dataset_free(MtfDataset *d);

/**
 * # Safety
 * `d` must be a valid dataset handle.
 */
MtfStatus mtf_dataset_n_rows(const MtfDataset *d, uintptr_t *out);

/**
 * Fits a forest. `params_json` may be null for defaults.
 *
 * # Safety
 * `data` must be a valid handle, `params_json` null or a valid string.
 */
MtfStatus mtf_forest_fit(const MtfDataset *data, const char *params_json, MtfForest **out);

/**
 * # Safety
 * `path` must be a valid string and `out` a valid pointer.
 */
MtfStatus mtf_forest_load(const char *path, MtfForest **out);

/**
 * # Safety
 * `f` must be a valid forest handle and `path` a valid string.
 */
MtfStatus mtf_forest_save(const MtfForest *f, const char *path);

/**
 * # Safety
 * `f` must be null or a forest handle.
 */
void mtf_forest_free(MtfForest *f);

/**
 * Number of treatment arms, control included.
 *
 * # Safety
 * `f` must be a valid forest handle and `out` a valid pointer.
 */
MtfStatus mtf_forest_n_arms(const MtfForest *f, uintptr_t *out);

/**
 * Potential outcomes and standard errors of every row of `data`, row-major
 * `n_rows x n_arms`. Rows outside common support get NaN. Both buffers must
 * hold `len` values, at least `n_rows * n_arms`; `se` may be null.
 *
 * # Safety
 * Handles must be valid and buffers writable for `len` values.
 */
MtfStatus mtf_forest_potential_outcomes(const MtfForest *f,
                                        const MtfDataset *data,
                                        double *po,
                                        double *se,
                                        uintptr_t len);

/**
 * Average effect of arm `m` against arm `l` over all supported rows.
 *
 * # Safety
 * Handles must be valid; `point` and `se` writable.
 */
MtfStatus mtf_forest_ate(const MtfForest *f,
                         const MtfDataset *data,
                         uintptr_t m,
                         uintptr_t l,
                         double *point,
                         double *se);

/**
 * Outcome-maximizing assignment of `n` rows to `k` arms. `po` is row-major
 * `n x k`; `caps[a] < 0` leaves arm `a` open; `caps` may be null for no
 * caps. `total_treated < 0` disables the treated total.
 *
 * # Safety
 * `po` holds `n*k` values, `caps` null or `k` values, `out` `n` slots.
 */
MtfStatus mtf_allocate_optimal(const double *po,
                               uintptr_t n,
                               uintptr_t k,
                               const int64_t *caps,
                               int64_t total_treated,
                               uintptr_t *out);

/**
 * Exact policy tree over continuous features. `po` is `n x k` and `x` is
 * `n x p`, both row-major; `observed` holds each row's arm.
 *
 * # Safety
 * Buffers must hold the stated number of values.
 */
MtfStatus mtf_policy_tree_search(const double *po,
                                 const uintptr_t *observed,
                                 const double *x,
                                 uintptr_t n,
                                 uintptr_t k,
                                 uintptr_t p,
                                 uintptr_t depth,
                                 uintptr_t grid_a,
                                 MtfPolicyTree **out);

/**
 * Arm recommended for each of `n` rows of `x` (`n x p`, row-major).
 *
 * # Safety
 * `t` must be a valid tree handle and buffers sized as stated.
 */
MtfStatus mtf_policy_tree_apply(const MtfPolicyTree *t,
                                const double *x,
                                uintptr_t n,
                                uintptr_t p,
                                uintptr_t *out);

/**
 * Total potential outcome the tree achieves on its training rows.
 *
 * # Safety
 * `t` must be a valid tree handle and `out` writable.
 */
MtfStatus mtf_policy_tree_value(const MtfPolicyTree *t, double *out);

/**
 * Text rendering; release with [`mtf_string_free`].
 *
 * # Safety
 * `t` must be a valid tree handle and `out` writable.
 */
MtfStatus mtf_policy_tree_render(const MtfPolicyTree *t, char **out);

/**
 * # Safety
 * `t` must be null or a tree handle.
 */
void mtf_policy_tree_free(MtfPolicyTree *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTFOREST_H */
