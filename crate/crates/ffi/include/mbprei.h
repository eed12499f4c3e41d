#ifndef MBPREI_H
#define MBPREI_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every `mbprei_*` call.
 */
typedef enum MbpreiStatus {
  MBPREI_STATUS_OK = 0,
  MBPREI_STATUS_NULL_POINTER = 1,
  MBPREI_STATUS_INVALID_ARGUMENT = 2,
  MBPREI_STATUS_SCENARIO = 3,
  MBPREI_STATUS_VALIDATION = 4,
  MBPREI_STATUS_NUMERICAL = 5,
  MBPREI_STATUS_PRECONDITION = 6,
  MBPREI_STATUS_IO = 7,
  MBPREI_STATUS_PANIC = 8,
} MbpreiStatus;

/**
 * Finite-horizon directions and pseudo spectral radii along one environment.
 */
typedef struct MbpreiDirections MbpreiDirections;

/**
 * A parsed and validated environment specification.
 */
typedef struct MbpreiSpec MbpreiSpec;

/**
 * One simulated trajectory with origin tags.
 */
typedef struct MbpreiTrajectory MbpreiTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library; static, do not free.
 */
const char *mbprei_version(void);

/**
 * Message of the last failed call on this thread, or null. Free with [`mbprei_string_free`].
 */
char *mbprei_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mbprei_string_free(char *s);

/**
 * Parses and validates a scenario from a JSON string.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MbpreiStatus mbprei_spec_from_json(const char *json, struct MbpreiSpec **out);

/**
 * Parses and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MbpreiStatus mbprei_spec_from_path(const char *path, struct MbpreiSpec **out);

/**
 * # Safety
 * `spec` must come from `mbprei_spec_from_*` and not have been freed. Null is ignored.
 */
void mbprei_spec_free(struct MbpreiSpec *spec);

/**
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_spec_dim(const struct MbpreiSpec *spec, size_t *out);

/**
 * Number of environment states.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_spec_states(const struct MbpreiSpec *spec, size_t *out);

/**
 * Mean matrix of `state`, row-major, into `out[0 .. d*d]`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum MbpreiStatus mbprei_spec_mean_matrix(const struct MbpreiSpec *spec,
                                          size_t state,
                                          double *out,
                                          size_t len);

/**
 * Backward-sweep directions for an explicit matrix sequence.
 *
 * `data` holds `count` row-major `d x d` matrices; the terminal vector is uniform.
 *
 * # Safety
 * `data` must hold `count * d * d` doubles and `out` must be valid.
 */
enum MbpreiStatus mbprei_directions_from_matrices(const double *data,
                                                  size_t d,
                                                  size_t count,
                                                  struct MbpreiDirections **out);

/**
 * Samples an environment of `n` steps plus a certified horizon and builds its directions.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_directions_sample(const struct MbpreiSpec *spec,
                                           size_t n,
                                           double tol,
                                           size_t horizon_cap,
                                           uint64_t seed,
                                           struct MbpreiDirections **out);

/**
 * # Safety
 * `dirs` must come from `mbprei_directions_*` and not have been freed. Null is ignored.
 */
void mbprei_directions_free(struct MbpreiDirections *dirs);

/**
 * Number of matrices `N` in the table.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_directions_horizon(const struct MbpreiDirections *dirs, size_t *out);

/**
 * `lambda_hat[n]` for `n < N`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_directions_lambda(const struct MbpreiDirections *dirs,
                                           size_t n,
                                           double *out);

/**
 * `u_hat[n]` for `n <= N`, into `out[0 .. d]`.
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum MbpreiStatus mbprei_directions_u(const struct MbpreiDirections *dirs,
                                      size_t n,
                                      double *out,
                                      size_t len);

/**
 * Largest L1 residual of the eigen-relation over the table.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_directions_residual(const struct MbpreiDirections *dirs, double *out);

/**
 * Simulates `n` generations from one ancestor of `initial_type` in a sampled environment.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_trajectory_simulate(const struct MbpreiSpec *spec,
                                             size_t initial_type,
                                             size_t n,
                                             bool immigration,
                                             uint64_t seed,
                                             struct MbpreiTrajectory **out);

/**
 * # Safety
 * `traj` must come from `mbprei_trajectory_simulate` and not have been freed. Null is ignored.
 */
void mbprei_trajectory_free(struct MbpreiTrajectory *traj);

/**
 * Number of simulated generations `n` (the trajectory holds `n + 1` populations).
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_trajectory_len(const struct MbpreiTrajectory *traj, size_t *out);

/**
 * Total population of generation `generation`, into `out[0 .. d]`.
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum MbpreiStatus mbprei_trajectory_total(const struct MbpreiTrajectory *traj,
                                          size_t generation,
                                          uint64_t *out,
                                          size_t len);

/**
 * Trajectory rows as CSV text. Free with [`mbprei_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_trajectory_csv(const struct MbpreiTrajectory *traj, char **out);

/**
 * Lyapunov exponent estimate and its standard error.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_estimate_gamma(const struct MbpreiSpec *spec,
                                        size_t n,
                                        size_t reps,
                                        uint64_t seed,
                                        double *gamma,
                                        double *std_error);

/**
 * Moment-Lyapunov estimate at `s <= 0` from products of length `n`.
 *
 * `reps == 0` selects exhaustive enumeration of environment words.
 *
 * # Safety
 * Pointers must be valid.
 */
enum MbpreiStatus mbprei_estimate_kappa(const struct MbpreiSpec *spec,
                                        double s,
                                        size_t n,
                                        size_t reps,
                                        uint64_t seed,
                                        double *kappa,
                                        double *ci_low,
                                        double *ci_high);

/**
 * Runs the command-line front end in process and returns its exit status.
 *
 * `argv[0]` is the program name, as for `main`.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
int mbprei_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MBPREI_H */
