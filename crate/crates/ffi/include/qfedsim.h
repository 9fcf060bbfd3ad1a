#ifndef QFEDSIM_H
#define QFEDSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QfStatus {
  QF_OK = 0,
  QF_ERR_NULL_POINTER = 1,
  QF_ERR_VALIDATION = 2,
  QF_ERR_DOMAIN = 3,
  QF_ERR_ZERO_RATE = 4,
  QF_ERR_DATA = 5,
  QF_ERR_IO = 6,
  QF_ERR_CONFIG = 7,
  QF_ERR_UTF8 = 8,
  QF_ERR_PANIC = 9,
} QfStatus;

/**
 * Opaque energy objective.
 */
typedef struct QfObjective QfObjective;

/**
 * Link parameters; see [`qf_channel_default`].
 */
typedef struct QfChannel {
  double bandwidth_hz;
  double noise_psd_dbm_per_hz;
  uint32_t blocklength;
  double pathloss;
} QfChannel;

typedef struct QfObjectiveValue {
  double raw_energy_j;
  double round_energy_j;
  double tau_pr_s;
  double penalized;
  double violation_s;
  double rounds_raw;
  double rate_bpcu;
  /**
   * 1 when the per-round time budget is met.
   */
  int32_t feasible;
} QfObjectiveValue;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread.
 */
const char *qf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qf_version(void);

/**
 * Gaussian tail probability `Q(x)`.
 */
double qf_q_function(double x);

/**
 * Inverse tail probability for `p` in `(0, 1)`.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum QfStatus qf_q_inverse(double p, double *out);

struct QfChannel qf_channel_default(void);

/**
 * Finite-blocklength rate in bits per channel use, floored at zero.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum QfStatus qf_achievable_rate(struct QfChannel channel,
                                 double tx_power_w,
                                 double error_prob,
                                 double gain_sq,
                                 double *out);

/**
 * Energy objective with default constants at `bits`.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum QfStatus qf_objective_new_default(uint32_t bits, struct QfObjective **out);

/**
 * Energy objective from TOML config text, using `objective.bits`.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` valid for a write.
 */
enum QfStatus qf_objective_from_config(const char *config_toml, struct QfObjective **out);

/**
 * Evaluates the objective at `(p_tx, q)`.
 *
 * # Safety
 * `obj` must come from a constructor above and not be freed; `out` must be
 * valid for a write.
 */
enum QfStatus qf_objective_evaluate(const struct QfObjective *obj,
                                    double p_tx,
                                    double q,
                                    struct QfObjectiveValue *out);

/**
 * Releases an objective. Null is ignored.
 *
 * # Safety
 * `obj` must be null or a live handle; it must not be used afterwards.
 */
void qf_objective_free(struct QfObjective *obj);

/**
 * Stochastically quantizes `len` values to `bits`-bit integer levels.
 *
 * # Safety
 * `values` must be readable and `levels` writable for `len` elements.
 */
enum QfStatus qf_quantize(const double *values,
                          size_t len,
                          uint32_t bits,
                          uint64_t seed,
                          int64_t *levels);

/**
 * Maps integer levels back to reals, `level / 2^(bits-1)`.
 *
 * # Safety
 * `levels` must be readable and `values` writable for `len` elements.
 */
enum QfStatus qf_dequantize(const int64_t *levels, size_t len, uint32_t bits, double *values);

/**
 * Runs an experiment (`"optimize"`, `"train"`, `"sweep"` or `"bounds"`)
 * from TOML config text and writes its files into `out_dir`.
 *
 * # Safety
 * All pointers must be NUL-terminated strings.
 */
enum QfStatus qf_run_experiment(const char *kind, const char *config_toml, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QFEDSIM_H */
