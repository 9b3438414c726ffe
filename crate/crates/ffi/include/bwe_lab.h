#ifndef BWE_LAB_H
#define BWE_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BweStatus {
  BweStatus_Ok = 0,
  BweStatus_NullPointer = 1,
  BweStatus_InvalidArgument = 2,
  BweStatus_Io = 3,
  BweStatus_BadCheckpoint = 4,
  BweStatus_Panic = 5,
} BweStatus;

/**
 * Opaque policy handle.
 */
typedef struct BwePolicy BwePolicy;

/**
 * Bitrate range of the log-linear action map.
 */
typedef struct BweActionMap {
  double b_min;
  double b_max;
} BweActionMap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *bwe_last_error(void);

/**
 * Number of values in one observation.
 */
size_t bwe_obs_dim(void);

/**
 * Loads a checkpoint file. On success `*out` owns a handle to release with
 * [`bwe_policy_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum BweStatus bwe_policy_load(const char *path, bool stochastic, struct BwePolicy **out);

/**
 * Starts a new call: clears history and reseeds sampling.
 *
 * # Safety
 * `policy` must come from [`bwe_policy_load`] and not be freed.
 */
enum BweStatus bwe_policy_reset(struct BwePolicy *policy, uint64_t call_seed);

/**
 * Feeds one raw observation and writes the bandwidth estimate in bits/s.
 *
 * # Safety
 * `policy` must be live, `raw_obs` must hold `len` doubles and `out_bps`
 * must be writable.
 */
enum BweStatus bwe_policy_act(struct BwePolicy *policy,
                              const double *raw_obs,
                              size_t len,
                              double *out_bps);

/**
 * Bitrate range the policy was trained with.
 *
 * # Safety
 * `policy` must be live and `out` writable.
 */
enum BweStatus bwe_policy_action_map(const struct BwePolicy *policy, struct BweActionMap *out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `policy` must come from [`bwe_policy_load`] and not be used afterwards.
 */
void bwe_policy_free(struct BwePolicy *policy);

/**
 * Default bitrate range.
 */
struct BweActionMap bwe_action_map_default(void);

/**
 * Normalized action in [-1, 1] to bits/s.
 *
 * # Safety
 * `out_bps` must be writable.
 */
enum BweStatus bwe_action_to_bps(struct BweActionMap map, double action, double *out_bps);

/**
 * Bits/s to normalized action, clamping to the range.
 *
 * # Safety
 * `out_action` must be writable.
 */
enum BweStatus bwe_bps_to_action(struct BweActionMap map, double bps, double *out_action);

/**
 * Normalizes a raw observation for the given bitrate range.
 *
 * # Safety
 * `raw` and `out` must each hold `len` doubles.
 */
enum BweStatus bwe_normalize_observation(struct BweActionMap map,
                                         const double *raw,
                                         double *out,
                                         size_t len);

/**
 * Squared 2-Wasserstein distance between two Gaussians.
 */
double bwe_gaussian_w2_sq(double mu_a, double sigma_a, double mu_b, double sigma_b);

/**
 * Independent-coupling upper bound on the squared mixture distance.
 *
 * # Safety
 * Mixture arrays must hold `na` (resp. `nb`) doubles; `out` must be writable.
 */
enum BweStatus bwe_mw2_upper(const double *wa,
                             const double *ma,
                             const double *sa,
                             size_t na,
                             const double *wb,
                             const double *mb,
                             const double *sb,
                             size_t nb,
                             double *out);

/**
 * Log density of a mixture at `x`.
 *
 * # Safety
 * Mixture arrays must hold `n` doubles; `out` must be writable.
 */
enum BweStatus bwe_gm_log_density(const double *w,
                                  const double *m,
                                  const double *s,
                                  size_t n,
                                  double x,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BWE_LAB_H */
