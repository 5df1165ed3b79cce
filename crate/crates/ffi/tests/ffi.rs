use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use socialnav::harness::{run_episode, EpisodeOptions, Scenario};
use socialnav::local_planner::Variant;
use socialnav_ffi::*;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(name)
}

fn open(name: &str, variant: Option<&str>) -> (SnStatus, *mut SnSession) {
    let path = CString::new(scenario(name).to_str().unwrap()).unwrap();
    let variant = variant.map(|v| CString::new(v).unwrap());
    let mut s = ptr::null_mut();
    let st = unsafe { sn_session_open(path.as_ptr(), variant.as_ref().map_or(ptr::null(), |v| v.as_ptr()), 0, &mut s) };
    (st, s)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(sn_last_error()) }.to_str().unwrap().to_string()
}

#[test]
fn session_matches_the_harness() {
    let (st, s) = open("distracted.json", Some("mpc-dcbf"));
    assert_eq!(st, SnStatus::Ok);
    let mut done = false;
    let mut steps = 0;
    while !done {
        assert_eq!(unsafe { sn_session_step(s, &mut done) }, SnStatus::Ok);
        steps += 1;
    }
    assert_eq!(unsafe { sn_session_step(s, ptr::null_mut()) }, SnStatus::Finished);
    let mut m = SnMetrics::default();
    let mut pose = SnPose::default();
    assert_eq!(unsafe { sn_session_metrics(s, &mut m) }, SnStatus::Ok);
    assert_eq!(unsafe { sn_session_robot_pose(s, &mut pose) }, SnStatus::Ok);
    unsafe { sn_session_free(s) };

    let sc = Scenario::load(&scenario("distracted.json")).unwrap();
    let r = run_episode(&sc, Variant::MpcDcbf, None, 0, EpisodeOptions::default()).unwrap();
    assert_eq!(steps, r.log.ticks.len());
    assert_eq!(
        (m.success, m.collided, m.time, m.traj_length),
        (r.metrics.success, r.metrics.collided, r.metrics.time, r.metrics.traj_length)
    );
    let end = r.log.outcome.final_robot;
    assert_eq!((pose.x, pose.y, pose.theta), (end.x, end.y, end.theta));
}

#[test]
fn errors_carry_codes_and_messages() {
    let (st, s) = open("missing.json", None);
    assert_eq!(st, SnStatus::Io);
    assert!(s.is_null());
    assert!(last_error().contains("missing.json"), "{}", last_error());

    let (st, _) = open("distracted.json", Some("teleport"));
    assert_eq!(st, SnStatus::InvalidArgument);
    assert!(last_error().contains("teleport"));

    let bad = CString::new("{\"name\": 3}").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sn_session_from_json(bad.as_ptr(), ptr::null(), 0, &mut s) }, SnStatus::Parse);
    assert_eq!(unsafe { sn_session_open(ptr::null(), ptr::null(), 0, &mut s) }, SnStatus::NullPointer);
    assert_eq!(unsafe { sn_session_step(ptr::null_mut(), ptr::null_mut()) }, SnStatus::NullPointer);

    let (_, s) = open("distracted.json", None);
    let mut m = SnMetrics::default();
    assert_eq!(unsafe { sn_session_metrics(s, &mut m) }, SnStatus::NotFinished);
    assert_eq!(unsafe { sn_session_set_goal(s, -40.0, 0.0) }, SnStatus::InvalidArgument);
    let mut ped = SnPedestrian::default();
    assert_eq!(unsafe { sn_session_pedestrian(s, 7, &mut ped) }, SnStatus::OutOfRange);
    assert_eq!(unsafe { sn_session_pedestrian(s, 0, &mut ped) }, SnStatus::Ok);
    assert_eq!(last_error(), "");
    assert_eq!(unsafe { sn_session_user_command(s, f64::NAN, 0.0) }, SnStatus::InvalidArgument);
    unsafe { sn_session_free(s) };
}

#[test]
fn user_commands_steer_the_robot() {
    let json = CString::new(
        r#"{"name": "open", "map": {"width_m": 12, "height_m": 6, "resolution_m": 0.1},
            "robot": {"start_m": [1.05, 3.05], "goal_m": [6.05, 3.05]}, "sim": {"max_duration_s": 2.0}}"#,
    )
    .unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sn_session_from_json(json.as_ptr(), ptr::null(), 0, &mut s) }, SnStatus::Ok);
    for k in 0..20 {
        let omega = if k < 10 { std::f64::consts::FRAC_PI_4 } else { 0.0 };
        assert_eq!(unsafe { sn_session_user_command(s, 0.8, omega) }, SnStatus::Ok);
        assert_eq!(unsafe { sn_session_step(s, ptr::null_mut()) }, SnStatus::Ok);
    }
    let mut pose = SnPose::default();
    unsafe { sn_session_robot_pose(s, &mut pose) };
    assert!((pose.theta - std::f64::consts::FRAC_PI_4).abs() < 0.1, "{}", pose.theta);
    unsafe { sn_session_free(s) };
}

#[test]
fn log_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("episode.jsonl");
    let (_, s) = open("aggressive.json", None);
    assert_eq!(unsafe { sn_session_run(s) }, SnStatus::Ok);
    let path = CString::new(out.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sn_session_write_log(s, path.as_ptr()) }, SnStatus::Ok);
    unsafe { sn_session_free(s) };
    let text = std::fs::read(&out).unwrap();
    let log = socialnav::harness::EpisodeLog::read_jsonl(text.as_slice()).unwrap();
    assert!(log.outcome.success);
}

#[test]
fn c_program_links_against_the_header() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/socialnav.h")).unwrap();
    for f in ["sn_session_open", "sn_session_step", "sn_session_free", "sn_last_error", "SN_STATUS_PANIC"] {
        assert!(header.contains(f), "{f} missing from header");
    }
    // The cdylib sits next to the deps directory holding this test binary.
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    assert!(lib_dir.join("libsocialnav_ffi.so").exists(), "{lib_dir:?}");
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .args(["-lsocialnav_ffi", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(scenario("aggressive.json")).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sc = Scenario::load(&scenario("aggressive.json")).unwrap();
    let r = run_episode(&sc, Variant::SsMpcDcbf, None, 0, EpisodeOptions::default()).unwrap();
    let end = r.log.outcome.final_robot;
    let expect = format!("1 0 {:.6} {:.6} {:.6}\n", r.metrics.time, end.x, end.y);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expect);
}
