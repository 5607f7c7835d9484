//! Episode stepping: dynamics, collisions, sensors and reward.

use super::episode::Episode;
use super::grid::OccupancyGrid;
use super::log::{LogEnd, Outcome};
use super::sensors::{scan_unchecked, Observation, SensorConfig};
use crate::dynamics::{integrate_observed, Command, DynParams, Mode, RobotState, STOP_INDEX};
use crate::error::{Error, Result};
use crate::geometry::{cartesian_to_polar, polar_to_cartesian, wrap_angle, Pose};
use crate::planner::fmm::{solve_time_field, SpeedModel, TimeField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub success: f64,
    pub slack: f64,
    pub collision: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { success: 2.5, slack: 0.01, collision: 0.1 }
    }
}

/// Everything that defines the simulated world apart from the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub dynamics: DynParams,
    pub mode: Mode,
    pub sensors: SensorConfig,
    pub robot_radius: f64,
    /// Below these speeds the robot counts as not moving.
    pub stop_v_eps: f64,
    pub stop_omega_eps: f64,
    pub reward: RewardConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dynamics: DynParams::default(),
            mode: Mode::SecondOrder,
            sensors: SensorConfig::default(),
            robot_radius: 0.25,
            stop_v_eps: 0.05,
            stop_omega_eps: 0.05,
            reward: RewardConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.dynamics.validate()?;
        self.sensors.validate()?;
        if !(self.robot_radius >= 0.0 && self.robot_radius.is_finite()) {
            return Err(Error::InvalidParams("robot radius must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_stationary(&self, s: &RobotState) -> bool {
        s.v.abs() < self.stop_v_eps && s.omega.abs() < self.stop_omega_eps
    }
}

/// Result of one decision step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub reward: f64,
    pub collision: bool,
    /// Decrease of the geodesic distance to the goal over the step.
    pub delta_geo: f64,
    pub outcome: Option<Outcome>,
}

/// Uniform-speed geodesic distance field to the episode goal.
pub fn geodesic_field(grid: &OccupancyGrid, episode: &Episode) -> Result<TimeField> {
    solve_time_field(grid, episode.goal_world(), SpeedModel::Uniform { v_max: 1.0 })
}

/// Lower-bound traversal time along the geodesic: straight-line time at
/// `v_max` plus turning time at `omega_max` for every heading change,
/// including the initial alignment.
pub fn optimal_time(field: &TimeField, start: &Pose, params: &DynParams) -> f64 {
    let length = field.value_at(start.x, start.y);
    let Some(path) = field.descent_path(start.position()) else {
        return f64::INFINITY;
    };
    let pts = resample(&path, 0.5);
    let mut heading = start.theta;
    let mut turn = 0.0;
    for w in pts.windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        if dx.hypot(dy) < 1e-9 {
            continue;
        }
        let h = dy.atan2(dx);
        turn += wrap_angle(h - heading).abs();
        heading = h;
    }
    length / params.v_max + turn / params.omega_max
}

fn resample(path: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut out = vec![path[0]];
    let mut carry = 0.0;
    for w in path.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        let mut s = spacing - carry;
        while s <= seg {
            let f = s / seg;
            out.push([w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])]);
            s += spacing;
        }
        carry = seg - (s - spacing);
    }
    // a short tail would add a spurious turn; end exactly on the goal
    let last = *path.last().unwrap();
    let tail = out.last().map(|p| (p[0] - last[0]).hypot(p[1] - last[1])).unwrap_or(0.0);
    if out.len() > 1 && tail < 0.5 * spacing {
        out.pop();
    }
    out.push(last);
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One running episode.
pub struct Engine {
    grid: Arc<OccupancyGrid>,
    geodesic: Arc<TimeField>,
    episode: Episode,
    cfg: WorldConfig,
    rng: ChaCha8Rng,
    state: RobotState,
    steps: usize,
    outcome: Option<Outcome>,
    prev_action: usize,
    frame: Pose,
    goal_static: [f64; 2],
    drift: [f64; 3],
    history: Vec<(f64, RobotState)>,
    path_length: f64,
    collisions: usize,
    velocity_clip: Option<f64>,
    geo_now: f64,
    geodesic_optimal: f64,
    optimal_time: f64,
}

impl Engine {
    pub fn new(grid: Arc<OccupancyGrid>, episode: Episode, cfg: WorldConfig, seed: u64) -> Result<Self> {
        let field = Arc::new(geodesic_field(&grid, &episode)?);
        Self::with_geodesic(grid, field, episode, cfg, seed)
    }

    /// Like [`Engine::new`] with a precomputed geodesic field for the goal.
    pub fn with_geodesic(
        grid: Arc<OccupancyGrid>,
        geodesic: Arc<TimeField>,
        episode: Episode,
        cfg: WorldConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        episode.validate(&grid)?;
        let start = episode.start_pose;
        let geo = geodesic.value_at(start.x, start.y);
        if !geo.is_finite() {
            return Err(Error::Infeasible(format!("episode {}: goal unreachable", episode.id)));
        }
        let t_star = optimal_time(&geodesic, &start, &cfg.dynamics);
        let state = RobotState::from_pose(start);
        Ok(Engine {
            frame: start,
            goal_static: episode.goal_polar,
            grid,
            geodesic,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            steps: 0,
            outcome: None,
            prev_action: STOP_INDEX,
            drift: [0.0; 3],
            history: vec![(0.0, state)],
            path_length: 0.0,
            collisions: 0,
            velocity_clip: None,
            geo_now: geo,
            geodesic_optimal: geo,
            optimal_time: t_star,
            episode,
        })
    }

    /// Caps commanded linear velocity at `fraction * v_max`.
    pub fn set_velocity_clip(&mut self, fraction: Option<f64>) -> Result<()> {
        if let Some(f) = fraction {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidParams("velocity clip must be > 0".into()));
            }
        }
        self.velocity_clip = fraction;
        Ok(())
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.dynamics.decision_dt()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn is_done(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Arc<OccupancyGrid> {
        &self.grid
    }

    pub fn geodesic(&self) -> &Arc<TimeField> {
        &self.geodesic
    }

    /// World pose of the current episode frame.
    pub fn frame(&self) -> Pose {
        self.frame
    }

    pub fn goal_static(&self) -> [f64; 2] {
        self.goal_static
    }

    pub fn geodesic_distance(&self) -> f64 {
        self.geo_now
    }

    /// Ground truth at `time`, interpolated between substeps.
    pub fn state_at(&self, time: f64) -> RobotState {
        let h = &self.history;
        if time <= h[0].0 {
            return h[0].1;
        }
        let k = h.partition_point(|(t, _)| *t <= time);
        if k >= h.len() {
            return h[h.len() - 1].1;
        }
        let (t0, a) = h[k - 1];
        let (t1, b) = h[k];
        let f = if t1 > t0 { (time - t0) / (t1 - t0) } else { 1.0 };
        let lerp = |p: f64, q: f64| p + f * (q - p);
        RobotState {
            x: lerp(a.x, b.x),
            y: lerp(a.y, b.y),
            theta: wrap_angle(a.theta + f * wrap_angle(b.theta - a.theta)),
            v: lerp(a.v, b.v),
            omega: lerp(a.omega, b.omega),
            vdot: lerp(a.vdot, b.vdot),
            omegadot: lerp(a.omegadot, b.omegadot),
        }
    }

    /// Sensor readings taken `delay_s` seconds in the past.
    pub fn observe(&mut self, delay_s: f64) -> Observation {
        let s = self.state_at(self.time() - delay_s.max(0.0));
        let sc = &self.cfg.sensors;
        let scan = scan_unchecked(&self.grid, &s.pose(), sc);
        let local = self.frame.inverse().compose(&s.pose());
        let odom_pose = [local.x + self.drift[0], local.y + self.drift[1], wrap_angle(local.theta + self.drift[2])];
        let (n_v, n_w) = (normal(&mut self.rng), normal(&mut self.rng));
        let odom_vel = [s.v + sc.odom_vel_std * n_v, s.omega + sc.odom_vel_std * n_w];
        let (lx, ly, lt) = (normal(&mut self.rng), normal(&mut self.rng), normal(&mut self.rng));
        let loc_pose = [local.x + sc.loc_std * lx, local.y + sc.loc_std * ly, wrap_angle(local.theta + sc.loc_theta_std * lt)];
        Observation { scan, odom_pose, odom_vel, loc_pose, goal: self.goal_static, prev_action: self.prev_action }
    }

    /// Redefines the episode frame at the current instant. `estimate` is the
    /// agent's pose estimate in the old frame; the goal is re-expressed
    /// relative to it, so estimation error carries into the new goal.
    pub fn reset_frame(&mut self, estimate: Pose) {
        let g = polar_to_cartesian(self.goal_static[0], self.goal_static[1]);
        let (rho, phi) = cartesian_to_polar(estimate.inverse_transform_point(g));
        self.goal_static = [rho, phi];
        self.frame = self.state.pose();
        self.drift = [0.0; 3];
    }

    /// Applies one command for a decision period.
    pub fn step(&mut self, cmd: &Command) -> Result<StepOutput> {
        if self.outcome.is_some() {
            return Err(Error::EpisodeDone);
        }
        if !(cmd.a_v.is_finite() && cmd.a_omega.is_finite()) {
            return Err(Error::NonFinite("command"));
        }
        let p = self.cfg.dynamics;
        let mut resolved = Command::from_index(cmd.index, &p)?;
        if let Some(f) = self.velocity_clip {
            resolved.a_v = resolved.a_v.min(f * p.v_max);
        }
        let t0 = self.time();
        let sdt = p.substep_dt();
        let sc = &self.cfg.sensors;
        let drift_draw = [normal(&mut self.rng), normal(&mut self.rng), normal(&mut self.rng)];
        let odom_noise = sc.odom_noise;
        let theta_std = sc.odom_theta_std;

        let rw = self.cfg.reward;
        let mut collided = false;
        if resolved.is_stop() && self.cfg.is_stationary(&self.state) {
            let d = self.state.pose().distance_to(self.episode.goal_world());
            let success = d <= self.episode.success_radius;
            self.outcome = Some(if success { Outcome::Success } else { Outcome::StoppedFar });
            self.history.push((t0 + p.decision_dt(), self.state));
        } else {
            let grid = &self.grid;
            let r = self.cfg.robot_radius;
            let mut last = self.state;
            let mut subs = Vec::with_capacity(p.substeps_per_decision() as usize);
            let (end, _) = integrate_observed(&self.state, &resolved, &p, self.cfg.mode, |s| {
                if grid.disc_collides(s.x, s.y, r) {
                    collided = true;
                    false
                } else {
                    last = *s;
                    subs.push(*s);
                    true
                }
            })?;
            let mut prev = self.state.position();
            for (k, s) in subs.iter().enumerate() {
                self.path_length += (s.x - prev[0]).hypot(s.y - prev[1]);
                prev = [s.x, s.y];
                self.history.push((t0 + (k + 1) as f64 * sdt, *s));
            }
            self.state = if collided { last.halted() } else { end };
            if collided {
                self.collisions += 1;
                self.history.push((t0 + p.decision_dt(), self.state));
            }
        }
        self.drift[0] += odom_noise.mean + odom_noise.std * drift_draw[0];
        self.drift[1] += odom_noise.mean + odom_noise.std * drift_draw[1];
        self.drift[2] += theta_std * drift_draw[2];

        let geo = self.geodesic.value_at(self.state.x, self.state.y);
        let delta_geo = self.geo_now - geo;
        self.geo_now = geo;
        self.steps += 1;
        self.prev_action = cmd.index;
        let success = self.outcome == Some(Outcome::Success);
        let reward = rw.success * f64::from(u8::from(success)) + delta_geo
            - rw.slack
            - rw.collision * f64::from(u8::from(collided));
        if self.outcome.is_none() && self.time() >= self.episode.time_limit - 1e-9 {
            self.outcome = Some(Outcome::Timeout);
        }
        Ok(StepOutput { reward, collision: collided, delta_geo, outcome: self.outcome })
    }

    /// Summary of the episode so far.
    pub fn end_record(&self) -> LogEnd {
        LogEnd {
            outcome: self.outcome.unwrap_or(Outcome::Timeout),
            steps: self.steps,
            episode_time: self.time(),
            path_length: self.path_length,
            geodesic_optimal: self.geodesic_optimal,
            optimal_time: self.optimal_time,
            final_state: self.state,
            collisions: self.collisions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_room() -> Arc<OccupancyGrid> {
        Arc::new(OccupancyGrid::room(8.0, 8.0, 0.1).unwrap())
    }

    fn episode_ahead(d: f64) -> Episode {
        Episode::from_world("e", "room", Pose::new(2.0, 4.0, 0.0), [2.0 + d, 4.0])
    }

    #[test]
    fn zero_command_costs_slack_only() {
        let mut e = Engine::new(open_room(), episode_ahead(3.0), WorldConfig::default(), 0).unwrap();
        let out = e.step(&Command::from_index(3, &DynParams::default()).unwrap()).unwrap();
        assert!(!out.collision);
        assert!((out.reward + 0.01).abs() < 1e-12);
    }

    #[test]
    fn stop_at_goal_is_success() {
        let mut e = Engine::new(open_room(), episode_ahead(0.1), WorldConfig::default(), 0).unwrap();
        let out = e.step(&Command::stop()).unwrap();
        assert_eq!(out.outcome, Some(Outcome::Success));
        assert!((out.reward - (2.5 - 0.01)).abs() < 1e-12);
        assert!(matches!(e.step(&Command::stop()), Err(Error::EpisodeDone)));
    }

    #[test]
    fn stop_far_from_goal_fails() {
        let mut e = Engine::new(open_room(), episode_ahead(3.0), WorldConfig::default(), 0).unwrap();
        assert_eq!(e.step(&Command::stop()).unwrap().outcome, Some(Outcome::StoppedFar));
    }

    #[test]
    fn driving_into_wall_collides() {
        let grid = open_room();
        // wall cells occupy x < 0.1; the disc touches them once x < 0.35
        let ep = Episode::from_world("w", "room", Pose::new(0.45, 4.0, std::f64::consts::PI), [4.0, 4.0]);
        let mut e = Engine::new(grid.clone(), ep, WorldConfig::default(), 0).unwrap();
        let full = Command::from_index(24, &DynParams::default()).unwrap();
        let mut hit = false;
        for _ in 0..5 {
            let out = e.step(&full).unwrap();
            if out.collision {
                hit = true;
                assert!(out.reward <= -0.1);
                break;
            }
        }
        assert!(hit);
        let s = e.state();
        assert_eq!((s.v, s.omega), (0.0, 0.0));
        assert!(!grid.disc_collides(s.x, s.y, 0.25));
    }

    #[test]
    fn noise_free_odometry_matches_truth() {
        let mut e = Engine::new(open_room(), episode_ahead(3.0), WorldConfig::default(), 1).unwrap();
        let p = DynParams::default();
        for k in [24, 26, 20, 9] {
            e.step(&Command::from_index(k, &p).unwrap()).unwrap();
            let o = e.observe(0.0);
            let local = e.frame().inverse().compose(&e.state().pose());
            assert_eq!(o.odom_pose, [local.x, local.y, local.theta]);
            assert_eq!(o.loc_pose, o.odom_pose);
        }
    }

    #[test]
    fn frame_reset_reexpresses_goal() {
        let mut e = Engine::new(open_room(), episode_ahead(3.0), WorldConfig::default(), 1).unwrap();
        let p = DynParams::default();
        for _ in 0..3 {
            e.step(&Command::from_index(24, &p).unwrap()).unwrap();
        }
        let o = e.observe(0.0);
        e.reset_frame(Pose::new(o.odom_pose[0], o.odom_pose[1], o.odom_pose[2]));
        let g = e.frame().transform_point(polar_to_cartesian(e.goal_static()[0], e.goal_static()[1]));
        let goal = e.episode().goal_world();
        assert!((g[0] - goal[0]).abs() < 1e-9 && (g[1] - goal[1]).abs() < 1e-9);
        let o = e.observe(0.0);
        assert!(o.odom_pose.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn time_limit_ends_episode() {
        let mut ep = episode_ahead(3.0);
        ep.time_limit = 1.0;
        let mut e = Engine::new(open_room(), ep, WorldConfig::default(), 1).unwrap();
        let zero = Command::from_index(3, &DynParams::default()).unwrap();
        assert!(e.step(&zero).unwrap().outcome.is_none());
        assert!(e.step(&zero).unwrap().outcome.is_none());
        assert_eq!(e.step(&zero).unwrap().outcome, Some(Outcome::Timeout));
    }

    #[test]
    fn optimal_time_straight_aligned() {
        let grid = open_room();
        let ep = Episode::from_world("e", "room", Pose::new(2.05, 4.05, 0.0), [5.05, 4.05]);
        let f = geodesic_field(&grid, &ep).unwrap();
        let t = optimal_time(&f, &ep.start_pose, &DynParams::default());
        assert!((t - 3.0).abs() < 0.1, "{t}");
        let turned = Pose::new(2.05, 4.05, std::f64::consts::FRAC_PI_2);
        let t2 = optimal_time(&f, &turned, &DynParams::default());
        assert!((t2 - t - std::f64::consts::FRAC_PI_2).abs() < 0.1, "{t2}");
    }
}
