#ifndef QCHANNEL_H
#define QCHANNEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum QcStatus {
  QC_STATUS_OK = 0,
  QC_STATUS_NULL_POINTER = 1,
  QC_STATUS_INVALID_ARGUMENT = 2,
  QC_STATUS_PARSE = 3,
  QC_STATUS_VALIDATION = 4,
  QC_STATUS_ORCHESTRATION = 5,
  QC_STATUS_IO = 6,
  QC_STATUS_SIMULATION = 7,
  QC_STATUS_NOT_FOUND = 8,
  QC_STATUS_INTERNAL = 9,
} QcStatus;

/**
 * Harness commands runnable through `qc_run`.
 */
typedef enum QcCommand {
  QC_COMMAND_SCAN_PSI = 0,
  QC_COMMAND_SCAN_PHI = 1,
  QC_COMMAND_FIG3 = 2,
  QC_COMMAND_QKD = 3,
  QC_COMMAND_ORCHESTRATE = 4,
  QC_COMMAND_PROBE_ORDER = 5,
} QcCommand;

/**
 * Two-user link built from a scenario's first two users.
 */
typedef struct QcLink QcLink;

/**
 * Metrics and checks from one command run.
 */
typedef struct QcReport QcReport;

/**
 * Parsed and validated scenario.
 */
typedef struct QcScenario QcScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len - 1` bytes). Returns the full message
 * length in bytes, excluding the terminator; pass `buf = NULL` to query it.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t qc_last_error_message(char *buf, size_t len);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum QcStatus qc_scenario_load(const char *path, struct QcScenario **out);

/**
 * Parses and validates scenario text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum QcStatus qc_scenario_parse(const char *text, struct QcScenario **out);

/**
 * # Safety
 * `scenario` must be NULL or a handle from `qc_scenario_load`/`qc_scenario_parse`
 * that has not been freed.
 */
void qc_scenario_free(struct QcScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum QcStatus qc_scenario_user_count(const struct QcScenario *scenario, size_t *out);

/**
 * Runs a harness command, writing its CSV files under `out_dir`.
 *
 * # Safety
 * `scenario` must be a live handle, `out_dir` a NUL-terminated string and
 * `report` writable. On `QC_STATUS_OK` the caller owns `*report`.
 */
enum QcStatus qc_run(const struct QcScenario *scenario,
                     enum QcCommand command,
                     uint64_t seed,
                     const char *out_dir,
                     struct QcReport **report);

/**
 * # Safety
 * `report` must be NULL or a live handle from `qc_run`.
 */
void qc_report_free(struct QcReport *report);

/**
 * Looks up a numeric metric by name. `QC_STATUS_NOT_FOUND` if absent or
 * not a number.
 *
 * # Safety
 * `report` must be a live handle, `name` a NUL-terminated string and
 * `out` writable.
 */
enum QcStatus qc_report_metric(const struct QcReport *report, const char *name, double *out);

/**
 * Number of checks the run evaluated and how many passed.
 *
 * # Safety
 * `report` must be a live handle; `total` and `passed` writable.
 */
enum QcStatus qc_report_checks(const struct QcReport *report, size_t *total, size_t *passed);

/**
 * Builds a link from the scenario's first two users.
 *
 * # Safety
 * `scenario` must be a live handle; `out` writable.
 */
enum QcStatus qc_link_new(const struct QcScenario *scenario, struct QcLink **out);

/**
 * # Safety
 * `link` must be NULL or a live handle from `qc_link_new`.
 */
void qc_link_free(struct QcLink *link);

/**
 * Sets user `user` (0 or 1) liquid-crystal phase in radians.
 *
 * # Safety
 * `link` must be a live handle.
 */
enum QcStatus qc_link_set_lc_phase(struct QcLink *link, uint32_t user, double phase);

/**
 * Sets user `user` (0 or 1) delay-stage offset in micrometres.
 *
 * # Safety
 * `link` must be a live handle.
 */
enum QcStatus qc_link_set_stage(struct QcLink *link, uint32_t user, double offset_um);

/**
 * Correlated probability of the shared singlet measured at 45 degrees.
 *
 * # Safety
 * `link` must be a live handle; `out` writable.
 */
enum QcStatus qc_link_shared_parity(const struct QcLink *link, double time_s, double *out);

/**
 * Correlated probability of a filtered pair sent down user `user`'s fiber.
 *
 * # Safety
 * `link` must be a live handle; `out` writable.
 */
enum QcStatus qc_link_filtered_parity(const struct QcLink *link,
                                      uint32_t user,
                                      double time_s,
                                      double *out);

/**
 * Derived 64-bit seed for subsystem `label`.
 *
 * # Safety
 * `label` must be a NUL-terminated string; `out` writable.
 */
enum QcStatus qc_seed_stream(uint64_t master, const char *label, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QCHANNEL_H */
