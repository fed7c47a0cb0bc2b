#ifndef RISKGRAD_H
#define RISKGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RgRiskKind {
  RG_RISK_KIND_EXPECTATION = 0,
  RG_RISK_KIND_ES = 1,
  RG_RISK_KIND_VARIANCE = 2,
  RG_RISK_KIND_MAD = 3,
  RG_RISK_KIND_ASYM_VARIANCE = 4,
  RG_RISK_KIND_MEAN_ES = 5,
  RG_RISK_KIND_MEAN_VARIANCE = 6,
  RG_RISK_KIND_ENTROPIC = 7,
  RG_RISK_KIND_EVAR = 8,
} RgRiskKind;

typedef enum RgStatus {
  RG_STATUS_OK = 0,
  RG_STATUS_NULL_POINTER = 1,
  RG_STATUS_INVALID_ARGUMENT = 2,
  RG_STATUS_DOMAIN = 3,
  RG_STATUS_PARSE = 4,
  RG_STATUS_UNSUPPORTED = 5,
  RG_STATUS_TOO_LARGE = 6,
  RG_STATUS_NON_FINITE = 7,
  RG_STATUS_PANIC = 8,
  RG_STATUS_OTHER = 9,
} RgStatus;

/**
 * Opaque risk objective.
 */
typedef struct RgRiskSpec RgRiskSpec;

/**
 * Opaque tabular MDP.
 */
typedef struct RgTabularMdp RgTabularMdp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t rg_last_error(char *buf, uintptr_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rg_version(void);

/**
 * Creates a risk objective. `alpha`, `lambda` and `gamma` are ignored by
 * kinds that do not use them.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum RgStatus rg_risk_spec_new(enum RgRiskKind kind,
                               double alpha,
                               double lambda,
                               double gamma,
                               struct RgRiskSpec **out);

/**
 * Sets the auxiliary-variable range; required for EVaR.
 *
 * # Safety
 * `spec` must be a live handle from `rg_risk_spec_new`.
 */
enum RgStatus rg_risk_spec_set_bracket(struct RgRiskSpec *spec, double lo, double hi);

/**
 * # Safety
 * `spec` must be null or a handle from `rg_risk_spec_new` not yet freed.
 */
void rg_risk_spec_free(struct RgRiskSpec *spec);

/**
 * Scoring function `f(y, upsilon)`.
 *
 * # Safety
 * `spec` must be a live handle and `out` writable.
 */
enum RgStatus rg_score(const struct RgRiskSpec *spec, double y, double upsilon, double *out);

/**
 * Risk of the empirical law of `n` samples and its minimizing auxiliary value.
 *
 * # Safety
 * `samples` must point to `n` doubles; `rho` and `upsilon` must be writable.
 */
enum RgStatus rg_empirical_risk(const struct RgRiskSpec *spec,
                                const double *samples,
                                uintptr_t n,
                                uintptr_t grid_n,
                                double *rho,
                                double *upsilon);

/**
 * Parses a tabular MDP from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum RgStatus rg_tabular_mdp_from_json(const char *json, struct RgTabularMdp **out);

/**
 * # Safety
 * `mdp` must be null or a handle from `rg_tabular_mdp_from_json` not yet freed.
 */
void rg_tabular_mdp_free(struct RgTabularMdp *mdp);

/**
 * Exact optimum of the risk objective over history-dependent policies: scans
 * `grid_n` auxiliary values and solves the augmented dynamic program at each.
 *
 * # Safety
 * Handles must be live; `upsilon` and `objective` must be writable.
 */
enum RgStatus rg_oracle_optimum(const struct RgTabularMdp *mdp,
                                const struct RgRiskSpec *spec,
                                uintptr_t grid_n,
                                double *upsilon,
                                double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISKGRAD_H */
