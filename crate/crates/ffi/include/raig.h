#ifndef RAIG_H
#define RAIG_H

/* Generated by cbindgen from the raig-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible entry point.
 */
typedef enum RaigStatus {
  RaigStatus_Ok = 0,
  RaigStatus_InvalidArgument = 1,
  RaigStatus_ParseError = 2,
  RaigStatus_SolveError = 3,
  RaigStatus_BufferTooSmall = 4,
  RaigStatus_Panic = 5,
} RaigStatus;

/**
 * Opaque scenario handle.
 */
typedef struct RaigScenario RaigScenario;

/**
 * Opaque solve-result handle.
 */
typedef struct RaigSolution RaigSolution;

/**
 * Solver options. Obtain defaults from [`raig_solve_options_default`] and
 * override fields as needed.
 */
typedef struct RaigSolveOptions {
  /**
   * Nonzero selects the time-consistent subroutine; zero the pinch-point.
   */
  int32_t time_consistent;
  /**
   * Control regularization weight; must be positive.
   */
  double eta;
  size_t max_iterations;
  /**
   * Convergence threshold on the max state change between iterates.
   */
  double convergence_tolerance;
  /**
   * Nonzero stops as soon as every player's objective is nonpositive.
   */
  int32_t early_stop;
  /**
   * Nonzero samples the initial state from the scenario's start region
   * using `seed`; zero uses the nominal start.
   */
  int32_t sample_start;
  uint64_t seed;
} RaigSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *raig_last_error(void);

struct RaigSolveOptions raig_solve_options_default(void);

/**
 * Build a scenario from a builtin id (`one-player`, `defensive-driving`,
 * `t-intersection`) or a path to a scenario JSON file.
 *
 * # Safety
 * `spec` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum RaigStatus raig_scenario_create(const char *spec, struct RaigScenario **out);

/**
 * Build a scenario from a JSON document (same schema as scenario files).
 *
 * # Safety
 * `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum RaigStatus raig_scenario_from_json(const char *json, struct RaigScenario **out);

/**
 * # Safety
 * `scenario` must be a pointer from `raig_scenario_create` (or null).
 */
void raig_scenario_free(struct RaigScenario *scenario);

/**
 * # Safety
 * `scenario` must be a valid scenario handle.
 */
size_t raig_scenario_num_players(const struct RaigScenario *scenario);

/**
 * # Safety
 * `scenario` must be a valid scenario handle.
 */
size_t raig_scenario_state_dim(const struct RaigScenario *scenario);

/**
 * # Safety
 * `scenario` must be a valid scenario handle.
 */
size_t raig_scenario_horizon(const struct RaigScenario *scenario);

/**
 * Solve a scenario. On success the caller owns the returned solution and
 * must free it with [`raig_solution_free`].
 *
 * # Safety
 * `scenario` must be a valid scenario handle; `options` may be null for
 * defaults; `out` must be a valid pointer.
 */
enum RaigStatus raig_solve(const struct RaigScenario *scenario,
                           const struct RaigSolveOptions *options,
                           struct RaigSolution **out);

/**
 * # Safety
 * `solution` must be a pointer from `raig_solve` (or null).
 */
void raig_solution_free(struct RaigSolution *solution);

/**
 * 1 when the solve converged or stopped early at a satisfied objective.
 *
 * # Safety
 * `solution` must be a valid solution handle.
 */
int32_t raig_solution_converged(const struct RaigSolution *solution);

/**
 * # Safety
 * `solution` must be a valid solution handle.
 */
size_t raig_solution_iterations(const struct RaigSolution *solution);

/**
 * Final reach-avoid objective of one player; NaN for a bad index.
 *
 * # Safety
 * `solution` must be a valid solution handle.
 */
double raig_solution_objective(const struct RaigSolution *solution, size_t player);

/**
 * Number of stored states (horizon + 1).
 *
 * # Safety
 * `solution` must be a valid solution handle.
 */
size_t raig_solution_state_count(const struct RaigSolution *solution);

/**
 * # Safety
 * `solution` must be a valid solution handle.
 */
size_t raig_solution_state_dim(const struct RaigSolution *solution);

/**
 * Copy the trajectory states into `buffer` as row-major
 * `state_count x state_dim` doubles. `len` is the buffer capacity in
 * doubles.
 *
 * # Safety
 * `solution` must be a valid solution handle and `buffer` must point to at
 * least `len` doubles.
 */
enum RaigStatus raig_solution_states(const struct RaigSolution *solution,
                                     double *buffer,
                                     size_t len);

/**
 * Trajectory as a JSON document. The returned string must be released with
 * [`raig_string_free`].
 *
 * # Safety
 * `solution` must be a valid solution handle and `out` a valid pointer.
 */
enum RaigStatus raig_solution_trajectory_json(const struct RaigSolution *solution, char **out);

/**
 * # Safety
 * `string` must come from this library (or be null).
 */
void raig_string_free(char *string);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAIG_H */
