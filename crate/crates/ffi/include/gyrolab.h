#ifndef GYROLAB_H
#define GYROLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GyrolabStatus {
  GYROLAB_STATUS_OK = 0,
  GYROLAB_STATUS_NULL_POINTER = 1,
  GYROLAB_STATUS_INVALID_UTF8 = 2,
  GYROLAB_STATUS_CONFIG = 3,
  GYROLAB_STATUS_PARSE = 4,
  GYROLAB_STATUS_PRECONDITION = 5,
  /**
   * Integration, budget or consistency failure.
   */
  GYROLAB_STATUS_NUMERICAL = 6,
  GYROLAB_STATUS_IO = 7,
  GYROLAB_STATUS_DOMAIN = 8,
  GYROLAB_STATUS_PANIC = 9,
} GyrolabStatus;

/**
 * A surface together with a magnetic field.
 */
typedef struct GyrolabSystem GyrolabSystem;

/**
 * Phase-space state in a chart (`chart`: 0 main, 1 south, 2 north).
 */
typedef struct GyrolabState {
  uint8_t chart;
  double t;
  double q1;
  double q2;
  double v1;
  double v2;
} GyrolabState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library; static, do not free.
 */
const char *gyrolab_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated, truncated
 * to `len - 1` bytes). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t gyrolab_last_error_message(char *buf, uintptr_t len);

/**
 * Build a system from TOML text with `[surface]` and `[field]` tables.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out_system` writable.
 */
enum GyrolabStatus gyrolab_system_from_toml(const char *toml, struct GyrolabSystem **out_system);

/**
 * Release a system; null is ignored.
 *
 * # Safety
 * `system` must come from [`gyrolab_system_from_toml`] and not be used afterwards.
 */
void gyrolab_system_free(struct GyrolabSystem *system);

/**
 * Field value `b` at a main-chart point.
 *
 * # Safety
 * Pointers must be valid.
 */
enum GyrolabStatus gyrolab_field_value(const struct GyrolabSystem *system,
                                       double q1,
                                       double q2,
                                       double *value);

/**
 * Integrate the flow at speed `s` from `(q1, q2)` with unit-speed heading `angle`
 * over `[0, t_end]`. Writes the final state and, if non-null, `max |kappa - b/s|`.
 *
 * # Safety
 * `system` and `end` must be valid; `curvature_error` may be null.
 */
enum GyrolabStatus gyrolab_simulate(const struct GyrolabSystem *system,
                                    double s,
                                    double q1,
                                    double q2,
                                    double angle,
                                    double t_end,
                                    double tol,
                                    struct GyrolabState *end,
                                    double *curvature_error);

/**
 * One return (`dir = +1`) or inverse return (`dir = -1`) of the section map on the
 * band `lo <= q1 <= hi` (NaN bounds: whole surface). `x` is updated in place.
 *
 * # Safety
 * `system` must be valid and `x` point to two doubles; `t` may be null.
 */
enum GyrolabStatus gyrolab_return_map(const struct GyrolabSystem *system,
                                      double s,
                                      double lo,
                                      double hi,
                                      double tol,
                                      int32_t dir,
                                      double *x,
                                      double *t);

/**
 * Rotation number (radians per return) of the section orbit through `(x1, x2)`.
 *
 * # Safety
 * `system` and `rho` must be valid.
 */
enum GyrolabStatus gyrolab_rotation_number(const struct GyrolabSystem *system,
                                           double s,
                                           double lo,
                                           double hi,
                                           double tol,
                                           double x1,
                                           double x2,
                                           uintptr_t iterates,
                                           double *rho);

/**
 * Period of the guiding-center circle through a main-chart point.
 *
 * # Safety
 * `system` and `period` must be valid.
 */
enum GyrolabStatus gyrolab_level_period(const struct GyrolabSystem *system,
                                        double q1,
                                        double q2,
                                        double *period);

/**
 * Run a scenario config file into `out_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum GyrolabStatus gyrolab_run_scenario(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GYROLAB_H */
