#ifndef LANGSKILL_H
#define LANGSKILL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bytes in one egocentric observation (rows x cols x channels).
 */
#define LS_OBSERVATION_LEN 147

typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_CONFIG = 3,
  LS_STATUS_MISSING_INPUT = 4,
  LS_STATUS_IO = 5,
  LS_STATUS_EPISODE_DONE = 6,
  LS_STATUS_VERIFICATION = 7,
  LS_STATUS_INTERNAL = 8,
} LsStatus;

/**
 * Running gridworld episode.
 */
typedef struct LsEnv LsEnv;

/**
 * Loaded skill model.
 */
typedef struct LsModel LsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ls_last_error(char *buf, size_t len);

/**
 * Samples the task for `(level, seed)` and starts an episode. `level` is
 * one of "single-subgoal", "two-subgoal" or "composite-long".
 *
 * # Safety
 * `level` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_env_new(const char *level, uint64_t seed, struct LsEnv **out);

/**
 * Resets the episode and writes the first observation
 * ([`LS_OBSERVATION_LEN`] bytes) to `obs`.
 *
 * # Safety
 * `env` must come from [`ls_env_new`]; `obs` must be null or hold
 * [`LS_OBSERVATION_LEN`] bytes.
 */
enum LsStatus ls_env_reset(struct LsEnv *env, uint8_t *obs);

/**
 * Applies one action.
 *
 * # Safety
 * As for [`ls_env_reset`]; `reward` and `done` must be null or writable.
 */
enum LsStatus ls_env_step(struct LsEnv *env,
                          size_t action,
                          uint8_t *obs,
                          double *reward,
                          bool *done);

/**
 * # Safety
 * `env` must be null or come from [`ls_env_new`] and not be used again.
 */
void ls_env_free(struct LsEnv *env);

/**
 * Loads a model checkpoint written by training.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LsStatus ls_model_load(const char *path, struct LsModel **out);

/**
 * Skill-library size of a loaded model.
 *
 * # Safety
 * `model` must come from [`ls_model_load`]; `k` must be writable.
 */
enum LsStatus ls_model_num_skills(const struct LsModel *model, size_t *k);

/**
 * # Safety
 * `model` must be null or come from [`ls_model_load`] and not be used again.
 */
void ls_model_free(struct LsModel *model);

/**
 * Code length in nats of one step given a skill distribution `q_k`
 * (length `k`), the switch probability, and the previous skill (`prev < 0`
 * for the first step).
 *
 * # Safety
 * `q_k` must point to `k` readable doubles; `out` must be writable.
 */
enum LsStatus ls_code_length_step(const double *q_k,
                                  size_t k,
                                  double q_switch,
                                  int64_t prev,
                                  double *out);

/**
 * Runs one pipeline stage (e.g. "gen-data", "verify") under `out_dir`.
 * `config` may be null for defaults.
 *
 * # Safety
 * `stage` and `out_dir` must be NUL-terminated strings; `config` must be
 * null or one.
 */
enum LsStatus ls_run_stage(const char *stage, const char *config, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANGSKILL_H */
