#ifndef DIFFPLAN_H
#define DIFFPLAN_H

/* Generated by cbindgen from diffplan-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Error codes returned by every fallible `dp_*` function.
 */
enum dp_status
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  /**
   * Success.
   */
  DP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DP_STATUS_NULL_ARGUMENT = -1,
  /**
   * A string argument was not valid UTF-8.
   */
  DP_STATUS_INVALID_UTF8 = -2,
  /**
   * File could not be read or written.
   */
  DP_STATUS_IO = -3,
  /**
   * File contents or configuration were rejected.
   */
  DP_STATUS_FORMAT = -4,
  /**
   * The operation ran but failed in the domain (e.g. invalid scene
   * endpoints for the chain).
   */
  DP_STATUS_DOMAIN = -5,
  /**
   * An internal panic was caught at the boundary.
   */
  DP_STATUS_PANIC = -6,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum dp_status dp_status;
#else
typedef int32_t dp_status;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque kinematic chain handle.
 */
typedef struct DpChain DpChain;

/**
 * Opaque guide-ensemble handle.
 */
typedef struct DpGuides DpGuides;

/**
 * Opaque plan-result handle.
 */
typedef struct DpPlan DpPlan;

/**
 * Opaque planner handle: a loaded checkpoint plus its schedule.
 */
typedef struct DpPlanner DpPlanner;

/**
 * Opaque scene handle.
 */
typedef struct DpScene DpScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The last error message for this thread; empty until an error occurs.
 * The pointer stays valid until the next failing `dp_*` call on the same
 * thread.
 */
const char *dp_last_error(void);

/**
 * Library version as a static string.
 */
const char *dp_version(void);

/**
 * Create the built-in three-joint desk arm.
 */
int32_t dp_chain_default(struct DpChain **out);

/**
 * Load a chain JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
int32_t dp_chain_load(const char *path, struct DpChain **out);

/**
 * Number of joints in the chain.
 */
int32_t dp_chain_joint_count(const struct DpChain *chain, size_t *out);

/**
 * # Safety
 * `chain` must be a pointer returned by a `dp_chain_*` constructor, not
 * yet freed.
 */
void dp_chain_free(struct DpChain *chain);

/**
 * Load and validate a scene JSON file against a chain.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `chain` a live chain handle;
 * `out` a valid pointer.
 */
int32_t dp_scene_load(const char *path, const struct DpChain *chain, struct DpScene **out);

/**
 * # Safety
 * `scene` must be a pointer returned by `dp_scene_load`, not yet freed.
 */
void dp_scene_free(struct DpScene *scene);

/**
 * The built-in twelve-guide ensemble.
 */
int32_t dp_guides_default(struct DpGuides **out);

/**
 * Load a guides JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
int32_t dp_guides_load(const char *path, struct DpGuides **out);

/**
 * Number of guides in the ensemble.
 */
int32_t dp_guides_len(const struct DpGuides *guides, size_t *out);

/**
 * # Safety
 * `guides` must be a pointer returned by a `dp_guides_*` constructor, not
 * yet freed.
 */
void dp_guides_free(struct DpGuides *guides);

/**
 * Load a checkpoint file into a planner handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
int32_t dp_planner_load(const char *path, struct DpPlanner **out);

/**
 * Trajectory horizon (waypoints) the planner produces.
 */
int32_t dp_planner_horizon(const struct DpPlanner *planner, size_t *out);

/**
 * # Safety
 * `planner` must be a pointer returned by `dp_planner_load`, not yet
 * freed.
 */
void dp_planner_free(struct DpPlanner *planner);

/**
 * Run the guided planner on a scene. `batch` trajectories are denoised
 * under the guide ensemble; the minimum-swept-volume one is selected.
 *
 * # Safety
 * All handles must be live pointers from their constructors; `out` must
 * be a valid pointer.
 */
int32_t dp_plan_run(const struct DpPlanner *planner,
                    const struct DpChain *chain,
                    const struct DpScene *scene,
                    const struct DpGuides *guides,
                    uint32_t batch,
                    uint64_t seed,
                    struct DpPlan **out);

/**
 * Whether the selected trajectory passed the collision oracle (1/0).
 */
int32_t dp_plan_success(const struct DpPlan *plan, int32_t *out);

/**
 * Borrow the selected trajectory: row-major waypoints-by-joints doubles.
 * The pointer lives as long as the plan handle.
 */
int32_t dp_plan_selected(const struct DpPlan *plan,
                         const double **data,
                         size_t *rows,
                         size_t *cols);

/**
 * Final swept-volume cost of the selected trajectory.
 */
int32_t dp_plan_swept_cost(const struct DpPlan *plan, double *out);

/**
 * # Safety
 * `plan` must be a pointer returned by `dp_plan_run`, not yet freed.
 * Pointers from `dp_plan_selected` become dangling after this call.
 */
void dp_plan_free(struct DpPlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFPLAN_H */
