#ifndef BHL_H
#define BHL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; edits are overwritten on build. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Convergence regime of a scenario.
typedef enum BhlRegime {
  BHL_REGIME_EXACT = 0,
  BHL_REGIME_IMPROVED = 1,
  BHL_REGIME_GENERAL = 2,
} BhlRegime;

// Status codes returned by every fallible function.
typedef enum BhlStatus {
  BHL_STATUS_OK = 0,
  BHL_STATUS_NULL_POINTER = 1,
  BHL_STATUS_INVALID_ARGUMENT = 2,
  BHL_STATUS_VALIDATION = 3,
  BHL_STATUS_NUMERICAL = 4,
  BHL_STATUS_PANIC = 5,
} BhlStatus;

// Opaque cell-problem solution.
typedef struct BhlCell BhlCell;

// Opaque scenario handle.
typedef struct BhlScenario BhlScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread. The pointer stays valid
// until the next `bhl_*` call on the same thread.
const char *bhl_last_error(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library and not freed before.
void bhl_string_free(char *s);

// Creates a built-in scenario by name.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum BhlStatus bhl_scenario_builtin(const char *name, struct BhlScenario **out);

// Parses and validates a scenario config given as JSON text.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum BhlStatus bhl_scenario_from_json(const char *json, struct BhlScenario **out);

// Serializes a scenario to its config JSON.
//
// # Safety
// `sc` must be a live handle; `out` must be writable.
enum BhlStatus bhl_scenario_to_json(const struct BhlScenario *sc, char **out);

// Spatial dimension of the scenario lattice, or 0 for a null handle.
//
// # Safety
// `sc` must be null or a live handle.
uintptr_t bhl_scenario_dim(const struct BhlScenario *sc);

// # Safety
// `sc` must be null or a handle not freed before.
void bhl_scenario_free(struct BhlScenario *sc);

// Solves the cell problem at Fourier cutoff `cutoff`.
//
// # Safety
// `sc` must be a live handle; `out` must be writable.
enum BhlStatus bhl_cell_solve(const struct BhlScenario *sc, uintptr_t cutoff, struct BhlCell **out);

// Order `m` of the effective matrix, or 0 for a null handle.
//
// # Safety
// `cell` must be null or a live handle.
uintptr_t bhl_cell_order(const struct BhlCell *cell);

// Copies the effective matrix row-major into `re` and `im` (each `len >= m*m`).
//
// # Safety
// `cell` must be a live handle; `re` and `im` must hold `len` doubles.
enum BhlStatus bhl_cell_effective(const struct BhlCell *cell,
                                  double *re,
                                  double *im,
                                  uintptr_t len);

// Residual norm of the Galerkin cell solve and the Voigt and Reuss margins.
//
// # Safety
// `cell` must be a live handle; each out-pointer must be null or writable.
enum BhlStatus bhl_cell_diagnostics(const struct BhlCell *cell,
                                    double *residual,
                                    double *voigt_margin,
                                    double *reuss_margin);

// # Safety
// `cell` must be null or a handle not freed before.
void bhl_cell_free(struct BhlCell *cell);

// Classifies the regime over `thetas` sampled directions.
//
// # Safety
// `sc` must be a live handle; `out` must be writable.
enum BhlStatus bhl_regime(const struct BhlScenario *sc, uintptr_t thetas, enum BhlRegime *out);

// Runs an operator error study with the scenario defaults and returns the
// report as JSON. `ss` and `eps` override the defaults when non-null.
//
// # Safety
// `sc` must be a live handle, `variant` a NUL-terminated string, `ss` and
// `eps` null or arrays of `n_ss` and `n_eps` doubles, `out` writable.
enum BhlStatus bhl_error_study_json(const struct BhlScenario *sc,
                                    const char *variant,
                                    const double *ss,
                                    uintptr_t n_ss,
                                    const double *eps,
                                    uintptr_t n_eps,
                                    char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BHL_H */
