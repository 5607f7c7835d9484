//! Greedy Fast-Marching expert.

use super::cost::{CostModel, CostWeights};
use super::fmm::{SpeedModel, TimeField};
use super::FieldCache;
use crate::dynamics::{action_space, integrate_observed, Command, DynParams, Mode, RobotState};
use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, wrap_angle, Pose};
use crate::policy::{EpisodeContext, Policy, PolicyInput};
use crate::world::OccupancyGrid;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Where the expert takes its own pose from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSource {
    #[default]
    GroundTruth,
    Odometry,
    Localization,
    /// Pose estimate of the attached reference estimator.
    Estimator,
    /// Mean of odometry and localization.
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub weights: CostWeights,
    /// The expert's internal model of the robot.
    pub dynamics: DynParams,
    pub mode: Mode,
    pub robot_radius: f64,
    /// Extra clearance kept while the believed footprint is clear of it;
    /// absorbs small pose errors near walls.
    pub safety_margin: f64,
    pub pose_source: PoseSource,
    /// STOP once the believed goal distance drops below this fraction of
    /// the success radius.
    pub stop_fraction: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            weights: CostWeights::default(),
            dynamics: DynParams::default(),
            mode: Mode::SecondOrder,
            robot_radius: 0.25,
            safety_margin: 0.05,
            pose_source: PoseSource::GroundTruth,
            stop_fraction: 0.6,
        }
    }
}

/// Time-to-goal below which candidate actions are checked for overshoot.
const BRAKE_CHECK_S: f64 = 2.0;
const OVERSHOOT_TOL_S: f64 = 1e-6;
const COAST_PERIODS: usize = 12;
const DESCENT_RAYS: usize = 32;
const REST_SPEED: f64 = 0.05;
const ALIGNED_RAD: f64 = 0.2;

/// Whether coasting to rest from `p1` raises the time-to-goal at a later
/// decision step or, close to the goal, carries the robot past its closest
/// approach.
fn coast_rises(model: &CostModel<'_>, p1: &RobotState) -> Result<bool> {
    let t0 = model.field.value_at(p1.x, p1.y);
    let (mut t_min, mut t_step) = (t0, t0);
    let mut s = *p1;
    for _ in 0..COAST_PERIODS {
        let (next, _) = integrate_observed(&s, &Command::stop(), model.dynamics, model.mode, |sub| {
            t_min = t_min.min(model.field.value_at(sub.x, sub.y));
            true
        })?;
        s = next;
        let t = model.field.value_at(s.x, s.y);
        if !(t <= t_step + OVERSHOOT_TOL_S) {
            return Ok(true);
        }
        t_step = t;
        if s.v.abs() < 1e-3 && s.omega.abs() < 1e-3 {
            break;
        }
    }
    Ok(t0 < BRAKE_CHECK_S && t_step > t_min + OVERSHOOT_TOL_S)
}

/// Lowest-cost action among those that can still brake before the goal
/// (the plain minimum when none can), and whether it makes progress.
fn braking_aware_action(model: &CostModel<'_>, state: &RobotState) -> Result<(Command, bool)> {
    let mut best: Option<(Command, f64, f64)> = None;
    let mut fallback: Option<(Command, f64)> = None;
    for c in action_space(model.dynamics) {
        let (p1, hit) = model.predict(state, &c)?;
        let cost = model.terms_at(&p1, hit).total();
        if fallback.map(|(_, b)| cost < b).unwrap_or(true) {
            fallback = Some((c, cost));
        }
        if best.map(|(_, b, _)| cost < b).unwrap_or(true) && !coast_rises(model, &p1)? {
            best = Some((c, cost, model.field.value_at(p1.x, p1.y)));
        }
    }
    let now = model.field.value_at(state.x, state.y);
    Ok(match best {
        Some((c, _, t)) if t < now - OVERSHOOT_TOL_S => (c, true),
        Some((c, _, _)) => (turn_downhill(model, state)?.unwrap_or(c), false),
        None => (fallback.expect("action space is never empty").0, false),
    })
}

/// Heading of steepest descent of the time field around `(x, y)`.
fn descent_heading(field: &TimeField, x: f64, y: f64) -> Option<f64> {
    let r = 2.0 * field.resolution();
    (0..DESCENT_RAYS)
        .map(|k| std::f64::consts::TAU * k as f64 / DESCENT_RAYS as f64)
        .map(|a| (a, field.value_at(x + r * a.cos(), y + r * a.sin())))
        .filter(|(_, t)| t.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(a, _)| a)
}

/// In-place rotation towards the descent heading for a robot at rest that
/// has no admissible way downhill.
fn turn_downhill(model: &CostModel<'_>, state: &RobotState) -> Result<Option<Command>> {
    if state.v.abs() > REST_SPEED {
        return Ok(None);
    }
    let Some(target) = descent_heading(model.field, state.x, state.y) else {
        return Ok(None);
    };
    if wrap_angle(target - state.theta).abs() < ALIGNED_RAD {
        return Ok(None);
    }
    let mut best: Option<(Command, f64)> = None;
    for c in action_space(model.dynamics).into_iter().filter(|c| c.a_v == 0.0) {
        let (p1, _) = model.predict(state, &c)?;
        let err = wrap_angle(target - p1.theta).abs();
        if best.map(|(_, e)| err < e).unwrap_or(true) && !coast_rises(model, &p1)? {
            best = Some((c, err));
        }
    }
    Ok(best.map(|(c, _)| c))
}

impl ExpertConfig {
    /// Planning speed field: wall slowdown, with the believed footprint and
    /// its safety margin kept out of narrow gaps.
    pub fn speed_model(&self) -> SpeedModel {
        SpeedModel::WallSlowdown {
            v_max: self.dynamics.v_max,
            k: self.weights.k,
            clearance: self.robot_radius + self.safety_margin,
        }
    }
}

pub struct ExpertPolicy {
    cfg: ExpertConfig,
    cache: Arc<FieldCache>,
    grid: Option<Arc<OccupancyGrid>>,
    anchor: Pose,
    success_radius: f64,
    // predicted accelerations for pose sources that do not observe them
    accel: [f64; 2],
}

impl ExpertPolicy {
    pub fn new(cfg: ExpertConfig, cache: Arc<FieldCache>) -> Result<Self> {
        cfg.weights.validate()?;
        cfg.dynamics.validate()?;
        Ok(ExpertPolicy { cfg, cache, grid: None, anchor: Pose::IDENTITY, success_radius: 0.2, accel: [0.0; 2] })
    }

    pub fn config(&self) -> &ExpertConfig {
        &self.cfg
    }

    pub fn speed_model(&self) -> SpeedModel {
        self.cfg.speed_model()
    }

    fn believed_state(&self, input: &PolicyInput<'_>) -> Result<RobotState> {
        let obs = input.obs;
        let to_pose = |p: [f64; 3]| Pose::new(p[0], p[1], p[2]);
        let local = match self.cfg.pose_source {
            PoseSource::GroundTruth => return Ok(*input.truth),
            PoseSource::Odometry => to_pose(obs.odom_pose),
            PoseSource::Localization => to_pose(obs.loc_pose),
            PoseSource::Estimator => input
                .estimate
                .ok_or_else(|| Error::InvalidParams("estimator pose source needs an attached estimator".into()))?,
            PoseSource::Average => {
                let (a, b) = (obs.odom_pose, obs.loc_pose);
                Pose::new(0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), (a[2].sin() + b[2].sin()).atan2(a[2].cos() + b[2].cos()))
            }
        };
        let w = self.anchor.compose(&local);
        Ok(RobotState {
            x: w.x,
            y: w.y,
            theta: w.theta,
            v: obs.odom_vel[0],
            omega: obs.odom_vel[1],
            vdot: self.accel[0],
            omegadot: self.accel[1],
        })
    }

    fn field_for(&self, grid: &Arc<OccupancyGrid>, goal: [f64; 2]) -> Result<Arc<TimeField>> {
        self.cache.get(grid, goal, self.speed_model())
    }
}

impl Policy for ExpertPolicy {
    fn name(&self) -> String {
        format!("expert:{:?}", self.cfg.pose_source).to_lowercase()
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> Result<()> {
        self.grid = Some(ctx.grid.clone());
        self.anchor = ctx.episode.start_pose;
        self.success_radius = ctx.episode.success_radius;
        self.accel = [0.0; 2];
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> Result<Command> {
        let grid = self.grid.clone().ok_or_else(|| Error::InvalidParams("expert used before begin_episode".into()))?;
        let state = self.believed_state(input)?;
        let g = polar_to_cartesian(input.obs.goal[0], input.obs.goal[1]);
        let goal = self.anchor.transform_point(g);
        if (goal[0] - state.x).hypot(goal[1] - state.y) < self.cfg.stop_fraction * self.success_radius {
            self.accel = [0.0; 2];
            return Ok(Command::stop());
        }
        let field = self.field_for(&grid, goal)?;
        // largest footprint, in margin steps, that the believed pose clears
        let step = self.cfg.safety_margin.max(0.01);
        let mut robot_radius = self.cfg.robot_radius + self.cfg.safety_margin;
        while robot_radius > 0.0 && grid.disc_collides(state.x, state.y, robot_radius) {
            robot_radius -= step;
        }
        let robot_radius = robot_radius.max(0.0);
        let model = CostModel {
            field: &field,
            grid: &grid,
            weights: &self.cfg.weights,
            dynamics: &self.cfg.dynamics,
            mode: self.cfg.mode,
            robot_radius,
        };
        let (cmd, progress) = braking_aware_action(&model, &state)?;
        // inside the success radius with no way closer that can still brake
        if !progress && (goal[0] - state.x).hypot(goal[1] - state.y) < self.success_radius {
            self.accel = [0.0; 2];
            return Ok(Command::stop());
        }
        let (next, _) = model.predict(&state, &cmd)?;
        self.accel = [next.vdot, next.omegadot];
        Ok(cmd)
    }

    fn reset_memory(&mut self) {
        self.accel = [0.0; 2];
    }

    fn on_frame_reset(&mut self, estimate: Pose) {
        self.anchor = self.anchor.compose(&estimate);
    }
}
