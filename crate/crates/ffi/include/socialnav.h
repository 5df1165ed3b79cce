#ifndef SOCIALNAV_H
#define SOCIALNAV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by every function.
 */
typedef enum SnStatus {
  SN_STATUS_OK = 0,
  SN_STATUS_NULL_POINTER = 1,
  SN_STATUS_INVALID_ARGUMENT = 2,
  SN_STATUS_IO = 3,
  SN_STATUS_PARSE = 4,
  SN_STATUS_PLANNING = 5,
  SN_STATUS_FINISHED = 6,
  SN_STATUS_NOT_FINISHED = 7,
  SN_STATUS_OUT_OF_RANGE = 8,
  SN_STATUS_PANIC = 9,
} SnStatus;

/*
 Opaque closed-loop session.
 */
typedef struct SnSession SnSession;

typedef struct SnPose {
  double x;
  double y;
  double theta;
} SnPose;

typedef struct SnPedestrian {
  uint32_t id;
  double x;
  double y;
  double vx;
  double vy;
} SnPedestrian;

/*
 Summary of a finished episode. `min_dist` is infinite without pedestrians.
 */
typedef struct SnMetrics {
  double min_dist;
  bool collided;
  double time;
  double traj_length;
  double linear_vel_var;
  double angular_vel_var;
  bool success;
} SnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, empty after success.
 The pointer stays valid until the next call on the same thread.
 */
const char *sn_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sn_version(void);

/*
 Opens a scenario file. `variant` may be null for `ss-mpc-dcbf`.

 # Safety
 String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum SnStatus sn_session_open(const char *scenario_path,
                              const char *variant,
                              uint64_t seed,
                              struct SnSession **out);

/*
 Builds a session from scenario JSON text.

 # Safety
 As for [`sn_session_open`].
 */
enum SnStatus sn_session_from_json(const char *scenario_json,
                                   const char *variant,
                                   uint64_t seed,
                                   struct SnSession **out);

/*
 Releases a session. Null is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void sn_session_free(struct SnSession *s);

/*
 Advances one tick. `done` (optional) reports whether the episode ended.

 # Safety
 `s` must be a live session; `done` null or writable.
 */
enum SnStatus sn_session_step(struct SnSession *s, bool *done);

/*
 Steps until the episode ends.

 # Safety
 `s` must be a live session.
 */
enum SnStatus sn_session_run(struct SnSession *s);

/*
 # Safety
 `s` must be a live session; `done` writable.
 */
enum SnStatus sn_session_is_done(struct SnSession *s, bool *done);

/*
 Simulated time in seconds.

 # Safety
 `s` must be a live session; `t` writable.
 */
enum SnStatus sn_session_time(struct SnSession *s, double *t);

/*
 # Safety
 `s` must be a live session; `pose` writable.
 */
enum SnStatus sn_session_robot_pose(struct SnSession *s, struct SnPose *pose);

/*
 # Safety
 `s` must be a live session; `count` writable.
 */
enum SnStatus sn_session_pedestrian_count(struct SnSession *s, size_t *count);

/*
 Ground-truth state of pedestrian `index`.

 # Safety
 `s` must be a live session; `out` writable.
 */
enum SnStatus sn_session_pedestrian(struct SnSession *s, size_t index, struct SnPedestrian *out);

/*
 Queues a user command for the next tick.

 # Safety
 `s` must be a live session.
 */
enum SnStatus sn_session_user_command(struct SnSession *s, double v, double omega);

/*
 Moves the goal and re-plans the global path.

 # Safety
 `s` must be a live session.
 */
enum SnStatus sn_session_set_goal(struct SnSession *s, double x, double y);

/*
 Sets the preferred waypoint and re-plans the global path.

 # Safety
 `s` must be a live session.
 */
enum SnStatus sn_session_set_preference(struct SnSession *s, double x, double y);

/*
 # Safety
 `s` must be a live session.
 */
enum SnStatus sn_session_clear_preference(struct SnSession *s);

/*
 Metrics of a finished episode.

 # Safety
 `s` must be a live session; `out` writable.
 */
enum SnStatus sn_session_metrics(struct SnSession *s, struct SnMetrics *out);

/*
 Writes the finished episode as JSON lines.

 # Safety
 `s` must be a live session; `path` NUL-terminated.
 */
enum SnStatus sn_session_write_log(struct SnSession *s, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOCIALNAV_H */
