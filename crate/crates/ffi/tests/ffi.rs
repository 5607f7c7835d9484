use navlab::world::{EpisodeGenConfig, MapGenConfig, TaskSet};
use navlab_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { navlab_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn defaults() -> NavlabDynParams {
    let mut p = std::mem::MaybeUninit::<NavlabDynParams>::uninit();
    assert_eq!(unsafe { navlab_dyn_params_default(p.as_mut_ptr()) }, NavlabStatus::Ok);
    unsafe { p.assume_init() }
}

fn task_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let set = TaskSet::generate_desk(1, 3, &MapGenConfig::default(), &EpisodeGenConfig::default(), 4, "f").unwrap();
    set.save(dir.path()).unwrap();
    dir
}

#[test]
fn default_params_validate() {
    let p = defaults();
    assert_eq!(p.decision_hz, 3);
    assert_eq!(unsafe { navlab_dyn_params_validate(&p) }, NavlabStatus::Ok);
    let bad = NavlabDynParams { tau_lin_acc: -1.0, ..p };
    assert_eq!(unsafe { navlab_dyn_params_validate(&bad) }, NavlabStatus::InvalidParams);
    assert!(!last_error().is_empty());
}

#[test]
fn step_response_reports_needed_capacity() {
    let p = defaults();
    let mut len = 0usize;
    let s = unsafe { navlab_step_response(&p, NavlabMode::SecondOrder, 24, 2.0, ptr::null_mut(), ptr::null_mut(), 0, &mut len) };
    assert_eq!(s, NavlabStatus::BufferTooSmall);
    assert_eq!(len, 61);
    let (mut v, mut w) = (vec![0.0; len], vec![0.0; len]);
    let s = unsafe { navlab_step_response(&p, NavlabMode::Instant, 24, 2.0, v.as_mut_ptr(), w.as_mut_ptr(), len, &mut len) };
    assert_eq!(s, NavlabStatus::Ok);
    assert_eq!(v[0], 0.0);
    assert!((v[len - 1] - p.v_max).abs() < 1e-12);
    let s = unsafe { navlab_step_response(&p, NavlabMode::Instant, 99, 2.0, v.as_mut_ptr(), w.as_mut_ptr(), len, &mut len) };
    assert_eq!(s, NavlabStatus::InvalidParams);
}

#[test]
fn d_belief_of_identical_params_is_zero() {
    let p = defaults();
    let mut d = f64::NAN;
    assert_eq!(unsafe { navlab_d_belief(&p, &p, NavlabMode::SecondOrder, 8, 10, 1, &mut d) }, NavlabStatus::Ok);
    assert_eq!(d, 0.0);
    let q = NavlabDynParams { v_max: 2.0, ..p };
    assert_eq!(unsafe { navlab_d_belief(&p, &q, NavlabMode::SecondOrder, 8, 10, 1, &mut d) }, NavlabStatus::Ok);
    assert!(d > 0.0);
}

#[test]
fn null_pointers_are_rejected() {
    assert_eq!(unsafe { navlab_dyn_params_default(ptr::null_mut()) }, NavlabStatus::InvalidArgument);
    assert!(last_error().contains("null"));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { navlab_tasks_load(ptr::null(), &mut out) }, NavlabStatus::InvalidArgument);
    unsafe { navlab_tasks_free(ptr::null_mut()) };
    unsafe { navlab_engine_free(ptr::null_mut()) };
}

#[test]
fn missing_task_dir_is_a_data_error() {
    let path = CString::new("/nonexistent/navlab").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { navlab_tasks_load(path.as_ptr(), &mut out) }, NavlabStatus::DataError);
    assert!(out.is_null());
}

#[test]
fn engine_runs_until_stop() {
    let dir = task_dir();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut tasks = ptr::null_mut();
    assert_eq!(unsafe { navlab_tasks_load(path.as_ptr(), &mut tasks) }, NavlabStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { navlab_tasks_episode_count(tasks, &mut n) }, NavlabStatus::Ok);
    assert_eq!(n, 3);

    let mut engine = ptr::null_mut();
    assert_eq!(unsafe { navlab_engine_new(tasks, 0, ptr::null(), NavlabMode::SecondOrder, 7, &mut engine) }, NavlabStatus::Ok);
    let mut info = NavlabStepInfo::default();
    assert_eq!(unsafe { navlab_engine_step(engine, 28, &mut info) }, NavlabStatus::Ok);
    // STOP at rest far from the goal ends the episode
    assert_eq!(info.outcome, 3);
    assert_eq!(unsafe { navlab_engine_step(engine, 28, &mut info) }, NavlabStatus::EpisodeDone);
    let mut st = NavlabState::default();
    assert_eq!(unsafe { navlab_engine_state(engine, &mut st) }, NavlabStatus::Ok);
    assert!(st.x.is_finite());
    unsafe { navlab_engine_free(engine) };

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { navlab_engine_new(tasks, 3, ptr::null(), NavlabMode::SecondOrder, 7, &mut bad) }, NavlabStatus::InvalidArgument);

    let mut r = NavlabEpisodeResult::default();
    assert_eq!(unsafe { navlab_run_expert(tasks, 1, ptr::null(), 3, &mut r) }, NavlabStatus::Ok);
    assert_eq!(r.success, 1);
    assert!(r.path_length >= r.geodesic_optimal * 0.99);
    unsafe { navlab_tasks_free(tasks) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(navlab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/navlab.h");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ NavlabDynParams p; return navlab_dyn_params_default(&p); }}\n")).unwrap();
    match std::process::Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler; skipped"),
    }
}
