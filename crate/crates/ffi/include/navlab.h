#ifndef NAVLAB_H
#define NAVLAB_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NavlabStatus {
  NAVLAB_STATUS_OK = 0,
  /**
   * Null pointer, bad index or non-UTF-8 string.
   */
  NAVLAB_STATUS_INVALID_ARGUMENT = 1,
  NAVLAB_STATUS_INVALID_PARAMS = 2,
  NAVLAB_STATUS_INFEASIBLE = 3,
  /**
   * Unreadable or malformed input files.
   */
  NAVLAB_STATUS_DATA_ERROR = 4,
  NAVLAB_STATUS_EPISODE_DONE = 5,
  /**
   * Output buffer too small; the required length was written.
   */
  NAVLAB_STATUS_BUFFER_TOO_SMALL = 6,
  NAVLAB_STATUS_PANIC = 7,
} NavlabStatus;

typedef enum NavlabMode {
  NAVLAB_MODE_SECOND_ORDER = 0,
  NAVLAB_MODE_INSTANT = 1,
} NavlabMode;

/**
 * One running episode.
 */
typedef struct NavlabEngine NavlabEngine;

/**
 * Loaded maps and episodes.
 */
typedef struct NavlabTasks NavlabTasks;

/**
 * Flat copy of the robot dynamics parameters.
 */
typedef struct NavlabDynParams {
  double tau_lin_acc;
  double tau_lin_brake;
  double tau_ang_acc;
  double tau_ang_brake;
  double gamma_lin_acc;
  double gamma_lin_brake;
  double gamma_ang_acc;
  double gamma_ang_brake;
  double v_max;
  double omega_max;
  uint32_t substep_hz;
  uint32_t decision_hz;
} NavlabDynParams;

/**
 * `0` running, `1` success, `2` timeout, `3` stopped away from the goal.
 */
typedef struct NavlabStepInfo {
  double reward;
  double delta_geo;
  uint8_t collision;
  uint8_t outcome;
} NavlabStepInfo;

typedef struct NavlabState {
  double x;
  double y;
  double theta;
  double v;
  double omega;
} NavlabState;

typedef struct NavlabEpisodeResult {
  uint8_t success;
  uint32_t steps;
  uint32_t collisions;
  double path_length;
  double geodesic_optimal;
  double episode_time;
  double optimal_time;
} NavlabEpisodeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`) and returns its full length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t navlab_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *navlab_version(void);

/**
 * # Safety
 * `out` must point to a writable `NavlabDynParams`.
 */
enum NavlabStatus navlab_dyn_params_default(struct NavlabDynParams *out);

/**
 * # Safety
 * `params` must point to a readable `NavlabDynParams`.
 */
enum NavlabStatus navlab_dyn_params_validate(const struct NavlabDynParams *params);

/**
 * Holds action `action` from rest for `duration` seconds and writes the
 * substep samples of `v` and `omega`. `out_len` receives the sample
 * count; when it exceeds `capacity` nothing is written and
 * `BufferTooSmall` is returned.
 *
 * # Safety
 * `out_v` and `out_omega` must hold `capacity` doubles; `params` and
 * `out_len` must be valid.
 */
enum NavlabStatus navlab_step_response(const struct NavlabDynParams *params,
                                       enum NavlabMode mode,
                                       uint32_t action,
                                       double duration,
                                       double *out_v,
                                       double *out_omega,
                                       size_t capacity,
                                       size_t *out_len);

/**
 * D_belief over a seeded bank of `k` random action sequences of length
 * `horizon` from rest.
 *
 * # Safety
 * Pointers must be valid.
 */
enum NavlabStatus navlab_d_belief(const struct NavlabDynParams *nominal,
                                  const struct NavlabDynParams *corrupted,
                                  enum NavlabMode mode,
                                  size_t k,
                                  size_t horizon,
                                  uint64_t seed,
                                  double *out);

/**
 * Loads a task directory (`episodes.jsonl` plus `maps/`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NavlabStatus navlab_tasks_load(const char *dir, struct NavlabTasks **out);

/**
 * # Safety
 * `tasks` must come from `navlab_tasks_load` and not be used afterwards.
 */
void navlab_tasks_free(struct NavlabTasks *tasks);

/**
 * # Safety
 * `tasks` must be a live handle.
 */
enum NavlabStatus navlab_tasks_episode_count(const struct NavlabTasks *tasks, size_t *out);

/**
 * Starts episode `index` of `tasks`. A null `params` uses the defaults.
 *
 * # Safety
 * `tasks` must be a live handle, `params` null or valid, `out` valid.
 */
enum NavlabStatus navlab_engine_new(const struct NavlabTasks *tasks,
                                    size_t index,
                                    const struct NavlabDynParams *params,
                                    enum NavlabMode mode,
                                    uint64_t seed,
                                    struct NavlabEngine **out);

/**
 * # Safety
 * `engine` must come from `navlab_engine_new` and not be used afterwards.
 */
void navlab_engine_free(struct NavlabEngine *engine);

/**
 * Applies action id `action` (28 is STOP) for one decision period.
 *
 * # Safety
 * `engine` must be a live handle; `info` may be null.
 */
enum NavlabStatus navlab_engine_step(struct NavlabEngine *engine,
                                     uint32_t action,
                                     struct NavlabStepInfo *info);

/**
 * Ground-truth world state.
 *
 * # Safety
 * `engine` must be a live handle and `out` valid.
 */
enum NavlabStatus navlab_engine_state(const struct NavlabEngine *engine, struct NavlabState *out);

/**
 * Runs the Fast-Marching expert on episode `index`.
 *
 * # Safety
 * `tasks` must be a live handle, `params` null or valid, `out` valid.
 */
enum NavlabStatus navlab_run_expert(const struct NavlabTasks *tasks,
                                    size_t index,
                                    const struct NavlabDynParams *params,
                                    uint64_t seed,
                                    struct NavlabEpisodeResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NAVLAB_H */
