//! Episode runner with deployment-time harness knobs.

use super::engine::{Engine, WorldConfig};
use super::episode::{Episode, TaskSet};
use super::grid::OccupancyGrid;
use super::log::{LogHeader, StepRecord, TrajectoryLog};
use super::sensors::Observation;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, ReferenceEstimator};
use crate::geometry::{polar_to_cartesian, Pose};
use crate::policy::{EpisodeContext, Policy, PolicyInput};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessOpts {
    /// Observation delay in milliseconds.
    pub obs_delay_ms: f64,
    /// Deployment-time cap on commanded linear velocity, as a fraction of `v_max`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub velocity_clip: Option<f64>,
    /// Clear policy memory every this many seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_period_s: Option<f64>,
    /// Redefine the episode frame whenever memory is cleared.
    pub frame_reset: bool,
    /// Clear memory once when the estimated goal distance drops below this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_near_goal_m: Option<f64>,
}

impl HarnessOpts {
    pub fn validate(&self) -> Result<()> {
        if !(self.obs_delay_ms >= 0.0 && self.obs_delay_ms.is_finite()) {
            return Err(Error::InvalidParams("observation delay must be >= 0".into()));
        }
        for (name, v) in [("velocity clip", self.velocity_clip), ("zero period", self.zero_period_s), ("zero distance", self.zero_near_goal_m)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParams(format!("{name} must be > 0")));
                }
            }
        }
        Ok(())
    }
}

/// Rewrites observations before the agent sees them.
pub trait ObservationTransform {
    fn apply(&mut self, obs: &mut Observation);
}

/// Per-run settings beyond the world itself.
pub struct RunOptions<'a> {
    pub harness: HarnessOpts,
    pub seed: u64,
    /// Runs a reference estimator next to the policy.
    pub estimator: Option<EstimatorConfig>,
    /// Stores the estimator latent in every step record.
    pub record_latent: bool,
    pub transform: Option<&'a mut dyn ObservationTransform>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions { harness: HarnessOpts::default(), seed: 0, estimator: None, record_latent: false, transform: None }
    }
}

impl<'a> RunOptions<'a> {
    pub fn new(harness: HarnessOpts, seed: u64) -> Self {
        RunOptions { harness, seed, ..Default::default() }
    }

    pub fn with_estimator(mut self, cfg: EstimatorConfig, record_latent: bool) -> Self {
        self.estimator = Some(cfg);
        self.record_latent = record_latent;
        self
    }
}

/// Runs one episode to completion.
pub fn run_episode(
    grid: &Arc<OccupancyGrid>,
    episode: &Episode,
    world: &WorldConfig,
    policy: &mut dyn Policy,
    opts: &mut RunOptions<'_>,
) -> Result<TrajectoryLog> {
    let h = opts.harness.clone();
    h.validate()?;
    let mut engine = Engine::new(grid.clone(), episode.clone(), world.clone(), opts.seed)?;
    engine.set_velocity_clip(h.velocity_clip)?;
    let dt = world.dynamics.decision_dt();
    let delay = h.obs_delay_ms / 1000.0;
    let mut estimator = opts
        .estimator
        .clone()
        .map(|c| ReferenceEstimator::new(c, world.dynamics, world.sensors.clone()));
    policy.begin_episode(&EpisodeContext { grid, episode })?;

    let header = LogHeader {
        episode: episode.clone(),
        dynamics: world.dynamics,
        mode: world.mode,
        sensors: world.sensors.clone(),
        harness: h.clone(),
        robot_radius: world.robot_radius,
        policy: policy.name(),
        seed: opts.seed,
    };
    let mut steps = Vec::new();
    let mut next_zero = h.zero_period_s;
    let mut near_goal_done = false;
    let mut obs = observe(&mut engine, delay, &mut opts.transform);

    while !engine.is_done() {
        let time = engine.time();
        let mut zero = false;
        if let Some(t) = next_zero {
            if time >= t - 1e-9 {
                zero = true;
                next_zero = Some(t + h.zero_period_s.unwrap_or(f64::INFINITY));
            }
        }
        if let (Some(d), false) = (h.zero_near_goal_m, near_goal_done) {
            let est = current_estimate(estimator.as_ref(), &obs);
            let g = polar_to_cartesian(obs.goal[0], obs.goal[1]);
            if (g[0] - est.x).hypot(g[1] - est.y) < d {
                near_goal_done = true;
                zero = true;
            }
        }
        let mut frame_reset = false;
        if zero {
            let est = current_estimate(estimator.as_ref(), &obs);
            policy.reset_memory();
            if let Some(e) = estimator.as_mut() {
                e.reset();
            }
            if h.frame_reset {
                engine.reset_frame(est);
                policy.on_frame_reset(est);
                frame_reset = true;
                obs = observe(&mut engine, delay, &mut opts.transform);
            }
        }
        if let Some(e) = estimator.as_mut() {
            e.update(&obs, dt);
        }
        let estimate = estimator.as_ref().map(|e| e.pose());
        let truth = *engine.state();
        let cmd = policy.act(&PolicyInput { obs: &obs, truth: &truth, time, estimate })?;
        let out = engine.step(&cmd)?;
        steps.push(StepRecord {
            t: steps.len(),
            time,
            state: truth,
            obs: obs.clone(),
            command: cmd,
            reward: out.reward,
            collision: out.collision,
            latent: if opts.record_latent { estimator.as_ref().map(|e| e.latent()) } else { None },
            memory_zeroed: zero,
            frame_reset,
            frame: engine.frame(),
        });
        if !engine.is_done() {
            obs = observe(&mut engine, delay, &mut opts.transform);
        }
    }
    Ok(TrajectoryLog { header, steps, end: engine.end_record() })
}

fn observe(engine: &mut Engine, delay: f64, transform: &mut Option<&mut dyn ObservationTransform>) -> Observation {
    let mut obs = engine.observe(delay);
    if let Some(t) = transform.as_mut() {
        t.apply(&mut obs);
    }
    obs
}

fn current_estimate(est: Option<&ReferenceEstimator>, obs: &Observation) -> Pose {
    match est {
        Some(e) => e.pose(),
        None => Pose::new(obs.odom_pose[0], obs.odom_pose[1], obs.odom_pose[2]),
    }
}

/// Decorrelated per-episode seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every episode of `tasks` in parallel with a fresh policy each.
/// Results keep the episode order.
pub fn run_task_set<F>(
    tasks: &TaskSet,
    world: &WorldConfig,
    harness: &HarnessOpts,
    estimator: Option<&EstimatorConfig>,
    record_latent: bool,
    seed: u64,
    make_policy: F,
) -> Result<Vec<TrajectoryLog>>
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    tasks
        .episodes
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let grid = tasks.map(&ep.map_id)?;
            let mut policy = make_policy();
            let mut opts = RunOptions::new(harness.clone(), derive_seed(seed, i as u64));
            opts.estimator = estimator.cloned();
            opts.record_latent = record_latent;
            run_episode(grid, ep, world, policy.as_mut(), &mut opts)
        })
        .collect()
}
