#ifndef PARABOLIC_SPIRAL_H
#define PARABOLIC_SPIRAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes.
typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_PARAMS = 2,
  PS_STATUS_USAGE = 3,
  PS_STATUS_NUMERICAL = 4,
  PS_STATUS_IO = 5,
  PS_STATUS_CHECK_FAILED = 6,
  PS_STATUS_PANIC = 7,
} PsStatus;

typedef enum PsVariant {
  PS_VARIANT_PIECEWISE = 0,
  PS_VARIANT_ANALYTIC = 1,
} PsVariant;

// Opaque spiral solution handle.
typedef struct PsSpiral PsSpiral;

// Selected constants of a construction.
typedef struct PsConstants {
  double c_mu;
  double alpha;
  // 1, 2 or 3.
  int32_t case_id;
  double lambda;
  double big_lambda;
} PsConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds the spiral solution in dimension `n` with decay `mu`.
//
// Pass NaN for `c_mu` or `alpha` to select them automatically.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum PsStatus ps_spiral_new(uint32_t n,
                            double mu,
                            enum PsVariant variant,
                            double c_mu,
                            double alpha,
                            struct PsSpiral **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `h` must come from [`ps_spiral_new`] and not be used afterwards.
void ps_spiral_free(struct PsSpiral *h);

// # Safety
// `h` must be a live handle and `out` writable.
enum PsStatus ps_spiral_constants(const struct PsSpiral *h, struct PsConstants *out);

// β(r) and γ(r).
//
// # Safety
// `h` must be a live handle; `beta` and `gamma` writable.
enum PsStatus ps_spiral_coefficients(const struct PsSpiral *h,
                                     double r,
                                     double *beta,
                                     double *gamma);

// w(x) for a point of length `n` (the handle's dimension).
//
// # Safety
// `x` must point to `n` doubles; `re` and `im` writable.
enum PsStatus ps_spiral_eval(const struct PsSpiral *h,
                             const double *x,
                             uintptr_t n,
                             double *re,
                             double *im);

// Modulus of the full elliptic residual at `x` with difference step `step`.
//
// # Safety
// `x` must point to `n` doubles; `out` writable.
enum PsStatus ps_spiral_residual(const struct PsSpiral *h,
                                 const double *x,
                                 uintptr_t n,
                                 double step,
                                 double *out);

// Runs a pipeline stage (`construct`, `audit`, `evolve`, `liouville`, `all`)
// with a JSON run configuration (null or `"{}"` for defaults), writing
// `report.json` and CSV tables into `out_dir`. Returns
// [`PsStatus::CheckFailed`] when the run completes but a check fails.
//
// # Safety
// `stage` and `out_dir` must be NUL-terminated strings; `config_json` may be null.
enum PsStatus ps_run(const char *stage, const char *config_json, const char *out_dir);

// Message for the last failure on this thread, or null. Valid until the
// next call into this library on the same thread.
const char *ps_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARABOLIC_SPIRAL_H */
