//! C ABI over the closed-loop session. Every entry point returns an
//! [`SnStatus`]; on failure [`sn_last_error`] describes the cause.
//! Handles are opaque and must be released with [`sn_session_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use socialnav::crowd_sim::ControlInput;
use socialnav::global_planner::PlanError;
use socialnav::gridworld::Point2;
use socialnav::harness::{compute_metrics, EpisodeOptions, HarnessError, Scenario, Session};
use socialnav::local_planner::Variant;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Planning = 5,
    Finished = 6,
    NotFinished = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// Opaque closed-loop session.
pub struct SnSession {
    inner: Session,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnPedestrian {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

/// Summary of a finished episode. `min_dist` is infinite without pedestrians.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SnMetrics {
    pub min_dist: f64,
    pub collided: bool,
    pub time: f64,
    pub traj_length: f64,
    pub linear_vel_var: f64,
    pub angular_vel_var: f64,
    pub success: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: SnStatus, msg: impl Into<String>) -> SnStatus {
    set_error(msg);
    status
}

fn harness_status(e: &HarnessError) -> SnStatus {
    match e {
        HarnessError::Io(_) => SnStatus::Io,
        HarnessError::Parse(_) => SnStatus::Parse,
        HarnessError::Invalid { .. } | HarnessError::Grid(_) | HarnessError::Costmap(_) => SnStatus::InvalidArgument,
        HarnessError::Plan(PlanError::OutOfBounds { .. } | PlanError::Lethal { .. } | PlanError::BadRequest(_)) => {
            SnStatus::InvalidArgument
        }
        HarnessError::Plan(_) | HarnessError::Planner(_) => SnStatus::Planning,
    }
}

fn from_harness(e: HarnessError) -> SnStatus {
    fail(harness_status(&e), e.to_string())
}

fn guard(f: impl FnOnce() -> SnStatus) -> SnStatus {
    let status = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(SnStatus::Panic, "internal panic"));
    if status == SnStatus::Ok {
        set_error("");
    }
    status
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, SnStatus> {
    if p.is_null() {
        return Err(fail(SnStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn session<'a>(s: *mut SnSession) -> Result<&'a mut Session, SnStatus> {
    s.as_mut().map(|s| &mut s.inner).ok_or_else(|| fail(SnStatus::NullPointer, "session is null"))
}

unsafe fn write<T>(out: *mut T, value: T) -> SnStatus {
    match out.as_mut() {
        Some(o) => {
            *o = value;
            SnStatus::Ok
        }
        None => fail(SnStatus::NullPointer, "output pointer is null"),
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

unsafe fn create(
    scenario: Result<Scenario, HarnessError>,
    variant: *const c_char,
    seed: u64,
    out: *mut *mut SnSession,
) -> SnStatus {
    if out.is_null() {
        return fail(SnStatus::NullPointer, "output pointer is null");
    }
    *out = ptr::null_mut();
    let variant: Variant = if variant.is_null() {
        Variant::SsMpcDcbf
    } else {
        tri!(tri!(text(variant, "variant"))
            .parse::<Variant>()
            .map_err(|e| fail(SnStatus::InvalidArgument, e.to_string())))
    };
    let sc = tri!(scenario.map_err(from_harness));
    let inner = tri!(Session::new(&sc, variant, seed, EpisodeOptions::default()).map_err(from_harness));
    *out = Box::into_raw(Box::new(SnSession { inner }));
    SnStatus::Ok
}

/// Message for the most recent failure on this thread, empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a scenario file. `variant` may be null for `ss-mpc-dcbf`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_open(
    scenario_path: *const c_char,
    variant: *const c_char,
    seed: u64,
    out: *mut *mut SnSession,
) -> SnStatus {
    guard(|| {
        let path = tri!(text(scenario_path, "scenario path"));
        create(Scenario::load(Path::new(path)), variant, seed, out)
    })
}

/// Builds a session from scenario JSON text.
///
/// # Safety
/// As for [`sn_session_open`].
#[no_mangle]
pub unsafe extern "C" fn sn_session_from_json(
    scenario_json: *const c_char,
    variant: *const c_char,
    seed: u64,
    out: *mut *mut SnSession,
) -> SnStatus {
    guard(|| {
        let json = tri!(text(scenario_json, "scenario json"));
        create(Scenario::from_json(json), variant, seed, out)
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sn_session_free(s: *mut SnSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Advances one tick. `done` (optional) reports whether the episode ended.
///
/// # Safety
/// `s` must be a live session; `done` null or writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_step(s: *mut SnSession, done: *mut bool) -> SnStatus {
    guard(|| {
        let s = tri!(session(s));
        if s.is_done() {
            return fail(SnStatus::Finished, "episode already finished");
        }
        tri!(s.step().map(|_| ()).map_err(from_harness));
        if let Some(d) = done.as_mut() {
            *d = s.is_done();
        }
        SnStatus::Ok
    })
}

/// Steps until the episode ends.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn sn_session_run(s: *mut SnSession) -> SnStatus {
    guard(|| {
        let s = tri!(session(s));
        while !s.is_done() {
            tri!(s.step().map(|_| ()).map_err(from_harness));
        }
        SnStatus::Ok
    })
}

/// # Safety
/// `s` must be a live session; `done` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_is_done(s: *mut SnSession, done: *mut bool) -> SnStatus {
    guard(|| write(done, tri!(session(s)).is_done()))
}

/// Simulated time in seconds.
///
/// # Safety
/// `s` must be a live session; `t` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_time(s: *mut SnSession, t: *mut f64) -> SnStatus {
    guard(|| write(t, tri!(session(s)).time()))
}

/// # Safety
/// `s` must be a live session; `pose` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_robot_pose(s: *mut SnSession, pose: *mut SnPose) -> SnStatus {
    guard(|| {
        let p = tri!(session(s)).world.robot.pose;
        write(pose, SnPose { x: p.x, y: p.y, theta: p.theta })
    })
}

/// # Safety
/// `s` must be a live session; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_pedestrian_count(s: *mut SnSession, count: *mut usize) -> SnStatus {
    guard(|| write(count, tri!(session(s)).world.pedestrians.len()))
}

/// Ground-truth state of pedestrian `index`.
///
/// # Safety
/// `s` must be a live session; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_pedestrian(s: *mut SnSession, index: usize, out: *mut SnPedestrian) -> SnStatus {
    guard(|| {
        let s = tri!(session(s));
        let Some(p) = s.world.pedestrians.get(index) else {
            return fail(SnStatus::OutOfRange, format!("pedestrian {index} of {}", s.world.pedestrians.len()));
        };
        write(out, SnPedestrian { id: p.id, x: p.position.x, y: p.position.y, vx: p.velocity.x, vy: p.velocity.y })
    })
}

/// Queues a user command for the next tick.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn sn_session_user_command(s: *mut SnSession, v: f64, omega: f64) -> SnStatus {
    guard(|| {
        if !(v.is_finite() && omega.is_finite()) {
            return fail(SnStatus::InvalidArgument, "command must be finite");
        }
        tri!(session(s)).push_user_command(ControlInput::new(v, omega));
        SnStatus::Ok
    })
}

/// Moves the goal and re-plans the global path.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn sn_session_set_goal(s: *mut SnSession, x: f64, y: f64) -> SnStatus {
    guard(|| {
        tri!(tri!(session(s)).set_goal(Point2::new(x, y)).map_err(from_harness));
        SnStatus::Ok
    })
}

/// Sets the preferred waypoint and re-plans the global path.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn sn_session_set_preference(s: *mut SnSession, x: f64, y: f64) -> SnStatus {
    guard(|| {
        tri!(tri!(session(s)).set_preference(Some(Point2::new(x, y))).map_err(from_harness));
        SnStatus::Ok
    })
}

/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn sn_session_clear_preference(s: *mut SnSession) -> SnStatus {
    guard(|| {
        tri!(tri!(session(s)).set_preference(None).map_err(from_harness));
        SnStatus::Ok
    })
}

/// Metrics of a finished episode.
///
/// # Safety
/// `s` must be a live session; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sn_session_metrics(s: *mut SnSession, out: *mut SnMetrics) -> SnStatus {
    guard(|| {
        let Some(log) = tri!(session(s)).log() else {
            return fail(SnStatus::NotFinished, "episode still running");
        };
        let m = compute_metrics(&log);
        write(
            out,
            SnMetrics {
                min_dist: m.min_dist,
                collided: m.collided,
                time: m.time,
                traj_length: m.traj_length,
                linear_vel_var: m.linear_vel_var,
                angular_vel_var: m.angular_vel_var,
                success: m.success,
            },
        )
    })
}

/// Writes the finished episode as JSON lines.
///
/// # Safety
/// `s` must be a live session; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sn_session_write_log(s: *mut SnSession, path: *const c_char) -> SnStatus {
    guard(|| {
        let path = tri!(text(path, "log path"));
        let Some(log) = tri!(session(s)).log() else {
            return fail(SnStatus::NotFinished, "episode still running");
        };
        match std::fs::write(path, log.to_jsonl()) {
            Ok(()) => SnStatus::Ok,
            Err(e) => fail(SnStatus::Io, format!("{path}: {e}")),
        }
    })
}
