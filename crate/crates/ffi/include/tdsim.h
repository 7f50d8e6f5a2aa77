#ifndef TDSIM_H
#define TDSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TdsimStatus {
  TDSIM_STATUS_OK = 0,
  TDSIM_STATUS_NULL_POINTER = 1,
  TDSIM_STATUS_INVALID_ARGUMENT = 2,
  TDSIM_STATUS_PARSE = 3,
  TDSIM_STATUS_VALIDATION = 4,
  TDSIM_STATUS_IO = 5,
  TDSIM_STATUS_DOMAIN = 6,
  TDSIM_STATUS_PANIC = 7,
} TdsimStatus;

/**
 * Which arm of the trigger-disabling loop to simulate.
 */
typedef enum TdsimMode {
  TDSIM_MODE_BOTH = 0,
  TDSIM_MODE_ON = 1,
  TDSIM_MODE_OFF = 2,
} TdsimMode;

/**
 * Result of a two-detector run.
 */
typedef struct TdsimDualResult TdsimDualResult;

/**
 * Loaded scenario plus its advisories.
 */
typedef struct TdsimScenario TdsimScenario;

/**
 * Result of a single-detector block acquisition.
 */
typedef struct TdsimSingleResult TdsimSingleResult;

typedef struct TdsimRunStats {
  uint64_t total_edges;
  uint64_t records;
  uint64_t positive_detections;
  uint64_t futile_records;
  uint64_t suppressed_edges;
  uint64_t truncated_dead_gates;
  uint32_t dead_gates_per_click;
  double useful_percentage;
} TdsimRunStats;

typedef struct TdsimCoincidenceStats {
  uint64_t n_edges;
  uint64_t delivered_gates;
  uint64_t n_events;
  uint64_t n_coincidences;
  uint64_t d0_only;
  uint64_t d1_only;
  double coincidence_fraction;
  double coincidence_per_gate;
} TdsimCoincidenceStats;

typedef struct TdsimVerdict {
  double statistic;
  double p_value;
  bool pass;
} TdsimVerdict;

typedef struct TdsimRandomness {
  struct TdsimVerdict monobit;
  struct TdsimVerdict runs;
  struct TdsimVerdict block_frequency;
  struct TdsimVerdict serial_lag1;
} TdsimRandomness;

typedef struct TdsimKeyReport {
  uint64_t key_length;
  bool condition_violated;
  uint64_t run_count;
  uint64_t anticorrelation_violations;
  double eve_known_fraction;
  /**
   * False when the key is too short for the battery; `randomness` is then zeroed.
   */
  bool randomness_valid;
  struct TdsimRandomness randomness;
} TdsimKeyReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. Valid until the
 * next `tdsim_*` call on the same thread.
 */
const char *tdsim_last_error(void);

/**
 * Static version string.
 */
const char *tdsim_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string, `out` writable.
 */
enum TdsimStatus tdsim_scenario_load(const char *path, struct TdsimScenario **out_scenario);

/**
 * Parses scenario text. `origin` labels error positions and may be null.
 *
 * # Safety
 * `text` and non-null `origin` must be NUL-terminated strings, `out` writable.
 */
enum TdsimStatus tdsim_scenario_parse(const char *text,
                                      const char *origin,
                                      struct TdsimScenario **out_scenario);

/**
 * # Safety
 * `scenario` must come from `tdsim_scenario_load`/`_parse` or be null.
 */
void tdsim_scenario_free(struct TdsimScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle or null.
 */
size_t tdsim_scenario_advisory_count(const struct TdsimScenario *scenario);

/**
 * Code of advisory `index` (e.g. `feedback_too_slow`), or null when out of range.
 * Valid while the scenario handle lives.
 *
 * # Safety
 * `scenario` must be a live handle or null.
 */
const char *tdsim_scenario_advisory_code(const struct TdsimScenario *scenario, size_t index);

/**
 * Human-readable text of advisory `index`, or null when out of range.
 *
 * # Safety
 * `scenario` must be a live handle or null.
 */
const char *tdsim_scenario_advisory_message(const struct TdsimScenario *scenario, size_t index);

/**
 * # Safety
 * `scenario` must be a live handle, `out_seed` writable.
 */
enum TdsimStatus tdsim_scenario_seed(const struct TdsimScenario *scenario, uint64_t *out_seed);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum TdsimStatus tdsim_scenario_set_seed(struct TdsimScenario *scenario, uint64_t seed);

/**
 * Runs the scenario's analyses and writes the full artifact set into `out_dir`.
 *
 * # Safety
 * `scenario` must be a live handle, `out_dir` a NUL-terminated string.
 */
enum TdsimStatus tdsim_run_scenario(const struct TdsimScenario *scenario,
                                    const char *out_dir,
                                    enum TdsimMode mode);

/**
 * Block acquisition with the first detector of the scenario.
 *
 * # Safety
 * `scenario` must be a live handle, `out_result` writable.
 */
enum TdsimStatus tdsim_run_single(const struct TdsimScenario *scenario,
                                  bool feedback_enabled,
                                  struct TdsimSingleResult **out_result);

/**
 * # Safety
 * `result` must come from `tdsim_run_single` or be null.
 */
void tdsim_single_free(struct TdsimSingleResult *result);

/**
 * # Safety
 * `result` must be a live handle, `out_stats` writable.
 */
enum TdsimStatus tdsim_single_stats(const struct TdsimSingleResult *result,
                                    struct TdsimRunStats *out_stats);

/**
 * # Safety
 * `result` must be a live handle or null.
 */
size_t tdsim_single_block_count(const struct TdsimSingleResult *result);

/**
 * # Safety
 * `result` must be a live handle, `out_pct` writable.
 */
enum TdsimStatus tdsim_single_block_useful_percentage(const struct TdsimSingleResult *result,
                                                      size_t index,
                                                      double *out_pct);

/**
 * Two-detector run sharing one disabling loop.
 *
 * # Safety
 * `scenario` must be a live handle, `out_result` writable.
 */
enum TdsimStatus tdsim_run_dual(const struct TdsimScenario *scenario,
                                bool feedback_enabled,
                                struct TdsimDualResult **out_result);

/**
 * # Safety
 * `result` must come from `tdsim_run_dual` or be null.
 */
void tdsim_dual_free(struct TdsimDualResult *result);

/**
 * # Safety
 * `result` must be a live handle, `out_stats` writable.
 */
enum TdsimStatus tdsim_dual_coincidence(const struct TdsimDualResult *result,
                                        struct TdsimCoincidenceStats *out_stats);

/**
 * # Safety
 * `result` must be a live handle or null.
 */
size_t tdsim_dual_key_length(const struct TdsimDualResult *result);

/**
 * Copies up to `capacity` key bits (0 or 1 per byte); the count copied goes to
 * `out_written`.
 *
 * # Safety
 * `buf` must hold `capacity` bytes, `out_written` writable.
 */
enum TdsimStatus tdsim_dual_key_bits(const struct TdsimDualResult *result,
                                     uint8_t *buf,
                                     size_t capacity,
                                     size_t *out_written);

/**
 * Dead-time runs, passive leakage and randomness battery for the sifted key,
 * using the scenario's dead time, trigger rate, disclosure fraction and seed.
 *
 * # Safety
 * Handles must be live, `out_report` writable.
 */
enum TdsimStatus tdsim_dual_analyze(const struct TdsimDualResult *result,
                                    const struct TdsimScenario *scenario,
                                    struct TdsimKeyReport *out_report);

/**
 * Probability that a pulse of mean photon number `mu` triggers a detector of efficiency `eta`.
 *
 * # Safety
 * `out_p` must be writable.
 */
enum TdsimStatus tdsim_detection_probability(double mu, double eta, double *out_p);

/**
 * # Safety
 * `out_pct` must be writable.
 */
enum TdsimStatus tdsim_useful_percentage(uint64_t n_total, uint64_t k, uint64_t m, double *out_pct);

/**
 * # Safety
 * `out_violated` must be writable.
 */
enum TdsimStatus tdsim_check_self_blinding(double dead_time,
                                           double trigger_rate,
                                           bool *out_violated);

/**
 * Response time of the disabling loop from its three delays, in seconds.
 *
 * # Safety
 * `out_tau` must be writable.
 */
enum TdsimStatus tdsim_total_response_time(double spad_latency,
                                           double cable_delay,
                                           double fpga_delay,
                                           double *out_tau);

/**
 * # Safety
 * `out_rate` must be writable.
 */
enum TdsimStatus tdsim_max_disabling_rate(double tau_resp, double *out_rate);

/**
 * Runs the four-test battery on `len` bits (one 0/1 value per byte).
 *
 * # Safety
 * `bits` must point to `len` readable bytes, `out_result` writable.
 */
enum TdsimStatus tdsim_randomness_battery(const uint8_t *bits,
                                          size_t len,
                                          struct TdsimRandomness *out_result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TDSIM_H */
