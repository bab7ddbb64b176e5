#ifndef HORMANDER_LAB_H
#define HORMANDER_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes of every entry point.
typedef enum HlStatus {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_INPUT = 2,
  HL_STATUS_PARSE = 3,
  HL_STATUS_DIMENSION_MISMATCH = 4,
  HL_STATUS_RANK_DEFICIENT = 5,
  HL_STATUS_OUT_OF_CHART = 6,
  HL_STATUS_NUMERIC = 7,
  HL_STATUS_SOLVER_DIVERGENCE = 8,
  HL_STATUS_PANIC = 9,
} HlStatus;

// An exponential chart at a base point.
typedef struct HlChart HlChart;

// A model operator: generators, coefficient matrix and optional kernel.
typedef struct HlModel HlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *hl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *hl_version(void);

// Shipped model by name: `heat`, `heat1`, `kolmogorov`, `heisenberg-time`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum HlStatus hl_model_by_name(const char *name, struct HlModel **out);

// Model from a JSON or TOML vector-field file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HlStatus hl_model_from_file(const char *path, struct HlModel **out);

// # Safety
// `model` must come from `hl_model_*` and not be freed twice; null is ignored.
void hl_model_free(struct HlModel *model);

// # Safety
// `model` must be a live handle; `out` must be writable.
enum HlStatus hl_model_dimension(const struct HlModel *model, size_t *out);

// Homogeneous dimension `q` at the origin.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum HlStatus hl_model_homogeneous_dimension(const struct HlModel *model, uint32_t *out);

// `Gamma(z, zeta)` for models with a closed fundamental solution.
//
// # Safety
// `z` and `zeta` must hold `len` doubles; `out` must be writable.
enum HlStatus hl_model_gamma(const struct HlModel *model,
                             const double *z,
                             const double *zeta,
                             size_t len,
                             double *out);

// Chart at base point `z` (`len` = model dimension).
//
// # Safety
// `model` must be a live handle, `z` must hold `len` doubles, `out` writable.
enum HlStatus hl_chart_at(const struct HlModel *model,
                          const double *z,
                          size_t len,
                          struct HlChart **out);

// # Safety
// `chart` must come from `hl_chart_at` and not be freed twice; null is ignored.
void hl_chart_free(struct HlChart *chart);

// Homogeneous degrees of the basis, written to `out[0..len]`.
//
// # Safety
// `chart` must be a live handle; `out` must hold `len` entries.
enum HlStatus hl_chart_degrees(const struct HlChart *chart, uint32_t *out, size_t len);

// `E(z, h)`.
//
// # Safety
// `h` and `out` must hold `len` doubles.
enum HlStatus hl_chart_exp(const struct HlChart *chart, const double *h, size_t len, double *out);

// `Log(zeta)`, the chart coordinates of `zeta`.
//
// # Safety
// `zeta` and `out` must hold `len` doubles.
enum HlStatus hl_chart_log(const struct HlChart *chart,
                           const double *zeta,
                           size_t len,
                           double *out);

// Quasi-distance `d(a, b)`, read in the chart rebased at `a`.
//
// # Safety
// `a` and `b` must hold `len` doubles; `out` must be writable.
enum HlStatus hl_chart_distance(const struct HlChart *chart,
                                const double *a,
                                const double *b,
                                size_t len,
                                double *out);

// `int_a^b omega(r)/r dr` for a modulus spec (`zero`, `lip`, `log`,
// `pow:<alpha>`). A divergent integral sets `*divergent = true` and
// `*out = INFINITY`.
//
// # Safety
// `modulus` must be NUL-terminated; `out` and `divergent` writable.
enum HlStatus hl_dini_integral(const char *modulus,
                               double a,
                               double b,
                               double *out,
                               bool *divergent);

// Iteration ledger for the forcing `omega_f(d(0, z))` as a JSON string.
// Release it with `hl_string_free`.
//
// # Safety
// `model` must be live, `omega_f` NUL-terminated, `out` writable.
enum HlStatus hl_schauder_ledger_json(const struct HlModel *model,
                                      const char *omega_f,
                                      size_t levels,
                                      size_t grid,
                                      char **out);

// # Safety
// `s` must come from this library and not be freed twice; null is ignored.
void hl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HORMANDER_LAB_H */
