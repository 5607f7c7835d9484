//! C interface to the navigation lab.
//!
//! Every function returns a [`NavlabStatus`]; on failure the message is
//! available from [`navlab_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Panics never
//! cross the boundary.

use navlab::dynamics::{step_response, Command, DynParams, Mode, RobotState};
use navlab::planner::{ExpertPolicy, ExpertConfig, FieldCache};
use navlab::sensitivity::{d_belief, ActionBank};
use navlab::world::{run_episode, Engine, Outcome, RunOptions, TaskSet, WorldConfig};
use navlab::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NavlabStatus {
    Ok = 0,
    /// Null pointer, bad index or non-UTF-8 string.
    InvalidArgument = 1,
    InvalidParams = 2,
    Infeasible = 3,
    /// Unreadable or malformed input files.
    DataError = 4,
    EpisodeDone = 5,
    /// Output buffer too small; the required length was written.
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NavlabMode {
    SecondOrder = 0,
    Instant = 1,
}

impl From<NavlabMode> for Mode {
    fn from(m: NavlabMode) -> Self {
        match m {
            NavlabMode::SecondOrder => Mode::SecondOrder,
            NavlabMode::Instant => Mode::Instant,
        }
    }
}

/// Flat copy of the robot dynamics parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NavlabDynParams {
    pub tau_lin_acc: f64,
    pub tau_lin_brake: f64,
    pub tau_ang_acc: f64,
    pub tau_ang_brake: f64,
    pub gamma_lin_acc: f64,
    pub gamma_lin_brake: f64,
    pub gamma_ang_acc: f64,
    pub gamma_ang_brake: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub substep_hz: u32,
    pub decision_hz: u32,
}

impl From<DynParams> for NavlabDynParams {
    fn from(p: DynParams) -> Self {
        NavlabDynParams {
            tau_lin_acc: p.tau_lin_acc,
            tau_lin_brake: p.tau_lin_brake,
            tau_ang_acc: p.tau_ang_acc,
            tau_ang_brake: p.tau_ang_brake,
            gamma_lin_acc: p.gamma_lin_acc,
            gamma_lin_brake: p.gamma_lin_brake,
            gamma_ang_acc: p.gamma_ang_acc,
            gamma_ang_brake: p.gamma_ang_brake,
            v_max: p.v_max,
            omega_max: p.omega_max,
            substep_hz: p.substep_hz,
            decision_hz: p.decision_hz,
        }
    }
}

impl From<NavlabDynParams> for DynParams {
    fn from(p: NavlabDynParams) -> Self {
        DynParams {
            tau_lin_acc: p.tau_lin_acc,
            tau_lin_brake: p.tau_lin_brake,
            tau_ang_acc: p.tau_ang_acc,
            tau_ang_brake: p.tau_ang_brake,
            gamma_lin_acc: p.gamma_lin_acc,
            gamma_lin_brake: p.gamma_lin_brake,
            gamma_ang_acc: p.gamma_ang_acc,
            gamma_ang_brake: p.gamma_ang_brake,
            v_max: p.v_max,
            omega_max: p.omega_max,
            substep_hz: p.substep_hz,
            decision_hz: p.decision_hz,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NavlabState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

impl From<RobotState> for NavlabState {
    fn from(s: RobotState) -> Self {
        NavlabState { x: s.x, y: s.y, theta: s.theta, v: s.v, omega: s.omega }
    }
}

/// `0` running, `1` success, `2` timeout, `3` stopped away from the goal.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NavlabStepInfo {
    pub reward: f64,
    pub delta_geo: f64,
    pub collision: u8,
    pub outcome: u8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NavlabEpisodeResult {
    pub success: u8,
    pub steps: u32,
    pub collisions: u32,
    pub path_length: f64,
    pub geodesic_optimal: f64,
    pub episode_time: f64,
    pub optimal_time: f64,
}

/// Loaded maps and episodes.
pub struct NavlabTasks {
    tasks: TaskSet,
    cache: Arc<FieldCache>,
}

/// One running episode.
pub struct NavlabEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NavlabStatus {
    match e {
        Error::InvalidParams(_) | Error::InvalidCommand(_) | Error::UnknownPlayer(_) | Error::NonFinite(_) => {
            NavlabStatus::InvalidParams
        }
        Error::Infeasible(_) => NavlabStatus::Infeasible,
        Error::EpisodeDone => NavlabStatus::EpisodeDone,
        _ => NavlabStatus::DataError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), NavlabStatus>) -> NavlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NavlabStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            NavlabStatus::Panic
        }
    }
}

fn lift<T>(r: navlab::Result<T>) -> Result<T, NavlabStatus> {
    r.map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })
}

fn invalid(msg: &str) -> NavlabStatus {
    set_error(msg);
    NavlabStatus::InvalidArgument
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, NavlabStatus> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, NavlabStatus> {
    p.as_mut().ok_or_else(|| invalid(&format!("{name} is null")))
}

fn outcome_code(o: Option<Outcome>) -> u8 {
    match o {
        None => 0,
        Some(Outcome::Success) => 1,
        Some(Outcome::Timeout) => 2,
        Some(Outcome::StoppedFar) => 3,
    }
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`) and returns its full length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn navlab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn navlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must point to a writable `NavlabDynParams`.
#[no_mangle]
pub unsafe extern "C" fn navlab_dyn_params_default(out: *mut NavlabDynParams) -> NavlabStatus {
    guard(|| {
        *deref_mut(out, "out")? = DynParams::default().into();
        Ok(())
    })
}

/// # Safety
/// `params` must point to a readable `NavlabDynParams`.
#[no_mangle]
pub unsafe extern "C" fn navlab_dyn_params_validate(params: *const NavlabDynParams) -> NavlabStatus {
    guard(|| lift(DynParams::from(*deref(params, "params")?).validate()))
}

/// Holds action `action` from rest for `duration` seconds and writes the
/// substep samples of `v` and `omega`. `out_len` receives the sample
/// count; when it exceeds `capacity` nothing is written and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `out_v` and `out_omega` must hold `capacity` doubles; `params` and
/// `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn navlab_step_response(
    params: *const NavlabDynParams,
    mode: NavlabMode,
    action: u32,
    duration: f64,
    out_v: *mut f64,
    out_omega: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> NavlabStatus {
    guard(|| {
        let p = DynParams::from(*deref(params, "params")?);
        let len = deref_mut(out_len, "out_len")?;
        lift(p.validate())?;
        let cmd = lift(Command::from_index(action as usize, &p))?;
        let r = lift(step_response(&cmd, &p, mode.into(), duration))?;
        *len = r.v.len();
        if r.v.len() > capacity {
            set_error("output buffer too small");
            return Err(NavlabStatus::BufferTooSmall);
        }
        if out_v.is_null() || out_omega.is_null() {
            return Err(invalid("output buffers are null"));
        }
        std::ptr::copy_nonoverlapping(r.v.as_ptr(), out_v, r.v.len());
        std::ptr::copy_nonoverlapping(r.omega.as_ptr(), out_omega, r.omega.len());
        Ok(())
    })
}

/// D_belief over a seeded bank of `k` random action sequences of length
/// `horizon` from rest.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn navlab_d_belief(
    nominal: *const NavlabDynParams,
    corrupted: *const NavlabDynParams,
    mode: NavlabMode,
    k: usize,
    horizon: usize,
    seed: u64,
    out: *mut f64,
) -> NavlabStatus {
    guard(|| {
        let a = DynParams::from(*deref(nominal, "nominal")?);
        let b = DynParams::from(*deref(corrupted, "corrupted")?);
        let out = deref_mut(out, "out")?;
        let bank = lift(ActionBank::random(k, horizon, seed))?;
        *out = lift(d_belief(&a, &b, &bank, mode.into()))?.value;
        Ok(())
    })
}

/// Loads a task directory (`episodes.jsonl` plus `maps/`).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn navlab_tasks_load(dir: *const c_char, out: *mut *mut NavlabTasks) -> NavlabStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if dir.is_null() {
            return Err(invalid("dir is null"));
        }
        let dir = CStr::from_ptr(dir).to_str().map_err(|_| invalid("dir is not UTF-8"))?;
        let tasks = lift(TaskSet::load_dir(std::path::Path::new(dir)))?;
        *out = Box::into_raw(Box::new(NavlabTasks { tasks, cache: Arc::new(FieldCache::default()) }));
        Ok(())
    })
}

/// # Safety
/// `tasks` must come from `navlab_tasks_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn navlab_tasks_free(tasks: *mut NavlabTasks) {
    if !tasks.is_null() {
        drop(Box::from_raw(tasks));
    }
}

/// # Safety
/// `tasks` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn navlab_tasks_episode_count(tasks: *const NavlabTasks, out: *mut usize) -> NavlabStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(tasks, "tasks")?.tasks.episodes.len();
        Ok(())
    })
}

fn world_with(params: Option<&NavlabDynParams>, mode: NavlabMode) -> WorldConfig {
    let mut w = WorldConfig::default();
    if let Some(p) = params {
        w.dynamics = (*p).into();
    }
    w.mode = mode.into();
    w
}

/// Starts episode `index` of `tasks`. A null `params` uses the defaults.
///
/// # Safety
/// `tasks` must be a live handle, `params` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn navlab_engine_new(
    tasks: *const NavlabTasks,
    index: usize,
    params: *const NavlabDynParams,
    mode: NavlabMode,
    seed: u64,
    out: *mut *mut NavlabEngine,
) -> NavlabStatus {
    guard(|| {
        let t = deref(tasks, "tasks")?;
        let out = deref_mut(out, "out")?;
        let ep = t.tasks.episodes.get(index).ok_or_else(|| invalid("episode index out of range"))?;
        let grid = lift(t.tasks.map(&ep.map_id))?.clone();
        let engine = lift(Engine::new(grid, ep.clone(), world_with(params.as_ref(), mode), seed))?;
        *out = Box::into_raw(Box::new(NavlabEngine { engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from `navlab_engine_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn navlab_engine_free(engine: *mut NavlabEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Applies action id `action` (28 is STOP) for one decision period.
///
/// # Safety
/// `engine` must be a live handle; `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn navlab_engine_step(
    engine: *mut NavlabEngine,
    action: u32,
    info: *mut NavlabStepInfo,
) -> NavlabStatus {
    guard(|| {
        let e = deref_mut(engine, "engine")?;
        let cmd = lift(Command::from_index(action as usize, &e.engine.config().dynamics))?;
        let o = lift(e.engine.step(&cmd))?;
        if let Some(info) = info.as_mut() {
            *info = NavlabStepInfo {
                reward: o.reward,
                delta_geo: o.delta_geo,
                collision: u8::from(o.collision),
                outcome: outcome_code(o.outcome),
            };
        }
        Ok(())
    })
}

/// Ground-truth world state.
///
/// # Safety
/// `engine` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn navlab_engine_state(engine: *const NavlabEngine, out: *mut NavlabState) -> NavlabStatus {
    guard(|| {
        *deref_mut(out, "out")? = (*deref(engine, "engine")?.engine.state()).into();
        Ok(())
    })
}

/// Runs the Fast-Marching expert on episode `index`.
///
/// # Safety
/// `tasks` must be a live handle, `params` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn navlab_run_expert(
    tasks: *const NavlabTasks,
    index: usize,
    params: *const NavlabDynParams,
    seed: u64,
    out: *mut NavlabEpisodeResult,
) -> NavlabStatus {
    guard(|| {
        let t = deref(tasks, "tasks")?;
        let out = deref_mut(out, "out")?;
        let ep = t.tasks.episodes.get(index).ok_or_else(|| invalid("episode index out of range"))?;
        let grid = lift(t.tasks.map(&ep.map_id))?;
        let world = world_with(params.as_ref(), NavlabMode::SecondOrder);
        let mut policy = lift(ExpertPolicy::new(ExpertConfig::default(), t.cache.clone()))?;
        let log = lift(run_episode(grid, ep, &world, &mut policy, &mut RunOptions::new(Default::default(), seed)))?;
        *out = NavlabEpisodeResult {
            success: u8::from(log.success()),
            steps: log.end.steps as u32,
            collisions: log.end.collisions as u32,
            path_length: log.end.path_length,
            geodesic_optimal: log.end.geodesic_optimal,
            episode_time: log.end.episode_time,
            optimal_time: log.end.optimal_time,
        };
        Ok(())
    })
}
