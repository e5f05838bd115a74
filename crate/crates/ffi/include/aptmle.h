#ifndef APTMLE_H
#define APTMLE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum AptmleStatus {
  APTMLE_STATUS_OK = 0,
  APTMLE_STATUS_NULL_ARGUMENT = 1,
  APTMLE_STATUS_INVALID_UTF8 = 2,
  APTMLE_STATUS_PARSE_ERROR = 3,
  APTMLE_STATUS_CONFIG_ERROR = 4,
  APTMLE_STATUS_DATA_ERROR = 5,
  APTMLE_STATUS_ESTIMATION_ERROR = 6,
  APTMLE_STATUS_IO_ERROR = 7,
  APTMLE_STATUS_PANIC = 8,
} AptmleStatus;

// Opaque handle: a parsed and validated analysis configuration.
typedef struct AptmleConfig AptmleConfig;

// Opaque handle: a loaded and validated trial dataset.
typedef struct AptmleDataset AptmleDataset;

// Opaque handle: a completed analysis report.
typedef struct AptmleReport AptmleReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *aptmle_version(void);

// Message for the most recent error on this thread, or null when none was
// recorded. The caller frees it with [`aptmle_string_free`].
char *aptmle_last_error(void);

// Free a string returned by this library. Null is ignored.
//
// # Safety
// `s` must have been returned by this library and not freed before.
void aptmle_string_free(char *s);

// Parse and validate an analysis configuration (TOML text, including the
// `[data]` column mapping). On success writes a new handle to `out`.
//
// # Safety
// `text` must be a valid NUL-terminated string; `out` must be a valid
// pointer.
enum AptmleStatus aptmle_config_parse(const char *text, struct AptmleConfig **out);

// # Safety
// `config` must be a handle from [`aptmle_config_parse`] or null.
void aptmle_config_free(struct AptmleConfig *config);

// Load and validate a trial CSV against the config's column mapping.
//
// # Safety
// `path` must be a valid NUL-terminated string; `config` a live config
// handle; `out` a valid pointer.
enum AptmleStatus aptmle_dataset_load_csv(const char *path,
                                          const struct AptmleConfig *config,
                                          struct AptmleDataset **out);

// # Safety
// `dataset` must be a handle from [`aptmle_dataset_load_csv`] or null.
void aptmle_dataset_free(struct AptmleDataset *dataset);

// Number of rows in a loaded dataset; 0 for a null handle.
//
// # Safety
// `dataset` must be a live dataset handle or null.
uint64_t aptmle_dataset_n_units(const struct AptmleDataset *dataset);

// Run the full pre-specified analysis for a config and a CSV path. Pass a
// null `seed_override` to use the configured seed. On success writes a new
// report handle to `out`.
//
// # Safety
// `config` must be a live config handle; `csv_path` a valid NUL-terminated
// string; `seed_override` null or a valid pointer; `out` a valid pointer.
enum AptmleStatus aptmle_analyze_csv(const struct AptmleConfig *config,
                                     const char *csv_path,
                                     const uint64_t *seed_override,
                                     struct AptmleReport **out);

// # Safety
// `report` must be a handle from [`aptmle_analyze_csv`] or null.
void aptmle_report_free(struct AptmleReport *report);

// Effect estimate on the natural outcome scale.
//
// # Safety
// `report` must be a live report handle; `out` a valid pointer.
enum AptmleStatus aptmle_report_effect(const struct AptmleReport *report, double *out);

// Standard error on the inference scale (log scale for ratios).
//
// # Safety
// `report` must be a live report handle; `out` a valid pointer.
enum AptmleStatus aptmle_report_se(const struct AptmleReport *report, double *out);

// Confidence-interval bounds of the final estimate.
//
// # Safety
// `report` must be a live report handle; `lo` and `hi` valid pointers.
enum AptmleStatus aptmle_report_ci(const struct AptmleReport *report, double *lo, double *hi);

// Estimated variance of the unadjusted estimator over that of the selected
// TMLE.
//
// # Safety
// `report` must be a live report handle; `out` a valid pointer.
enum AptmleStatus aptmle_report_precision_gain(const struct AptmleReport *report, double *out);

// Selected outcome-regression learner, as its config-grammar string.
// Returns null on a null handle. Free with [`aptmle_string_free`].
//
// # Safety
// `report` must be a live report handle or null.
char *aptmle_report_selected_or(const struct AptmleReport *report);

// Selected propensity-score learner, as its config-grammar string.
// Returns null on a null handle. Free with [`aptmle_string_free`].
//
// # Safety
// `report` must be a live report handle or null.
char *aptmle_report_selected_ps(const struct AptmleReport *report);

// Full report as a JSON document. Free with [`aptmle_string_free`].
//
// # Safety
// `report` must be a live report handle or null.
char *aptmle_report_to_json(const struct AptmleReport *report);

// Human-readable report summary. Free with [`aptmle_string_free`].
//
// # Safety
// `report` must be a live report handle or null.
char *aptmle_report_summary(const struct AptmleReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APTMLE_H */
