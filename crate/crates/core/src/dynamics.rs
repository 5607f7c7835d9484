//! Second-order velocity dynamics of a differential-drive robot.
//!
//! Each velocity channel (linear `v`, angular `omega`) follows
//!
//! ```text
//! d²v/dt² = (a - v) / tau² - (2 gamma / tau) dv/dt
//! ```
//!
//! where `a` is the held command, `tau` the response time and `gamma` the
//! damping ratio. `tau` and `gamma` are picked per substep from the
//! acceleration or braking variant of the channel. The ODE is integrated with
//! symplectic Euler (velocity derivative first, then velocity, then pose) at
//! `substep_hz` while commands arrive at `decision_hz`.

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose};
use serde::{Deserialize, Serialize};

/// Number of motion commands in the discrete action space.
pub const NUM_MOTION_ACTIONS: usize = 28;
/// Index of the STOP action, which maps to a zero command.
pub const STOP_INDEX: usize = 28;
/// Total number of action ids including STOP.
pub const NUM_ACTIONS: usize = 29;

const LINEAR_LEVELS: usize = 4;
const ANGULAR_LEVELS: usize = 7;

/// Physical parameters of the simulated robot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynParams {
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

impl Default for DynParams {
    fn default() -> Self {
        DynParams {
            tau_lin_acc: 0.3,
            tau_lin_brake: 0.3,
            tau_ang_acc: 0.3,
            tau_ang_brake: 0.3,
            gamma_lin_acc: 0.9,
            gamma_lin_brake: 0.9,
            gamma_ang_acc: 0.9,
            gamma_ang_brake: 0.9,
            v_max: 1.0,
            omega_max: 1.0,
            substep_hz: 30,
            decision_hz: 3,
        }
    }
}

impl DynParams {
    /// Same response time and damping on all four channel variants.
    pub fn uniform(tau: f64, gamma: f64) -> Self {
        DynParams {
            tau_lin_acc: tau,
            tau_lin_brake: tau,
            tau_ang_acc: tau,
            tau_ang_brake: tau,
            gamma_lin_acc: gamma,
            gamma_lin_brake: gamma,
            gamma_ang_acc: gamma,
            gamma_ang_brake: gamma,
            ..DynParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let taus = [self.tau_lin_acc, self.tau_lin_brake, self.tau_ang_acc, self.tau_ang_brake];
        let gammas = [
            self.gamma_lin_acc,
            self.gamma_lin_brake,
            self.gamma_ang_acc,
            self.gamma_ang_brake,
        ];
        if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidParams("response times must be finite and > 0".into()));
        }
        if gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidParams("damping ratios must be finite and > 0".into()));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::InvalidParams("v_max must be > 0".into()));
        }
        if !(self.omega_max.is_finite() && self.omega_max > 0.0) {
            return Err(Error::InvalidParams("omega_max must be > 0".into()));
        }
        if self.decision_hz == 0 || self.substep_hz == 0 || self.substep_hz % self.decision_hz != 0 {
            return Err(Error::InvalidParams(format!(
                "substep_hz ({}) must be a positive multiple of decision_hz ({})",
                self.substep_hz, self.decision_hz
            )));
        }
        Ok(())
    }

    pub fn decision_dt(&self) -> f64 {
        1.0 / self.decision_hz as f64
    }

    pub fn substep_dt(&self) -> f64 {
        1.0 / self.substep_hz as f64
    }

    pub fn substeps_per_decision(&self) -> u32 {
        self.substep_hz / self.decision_hz
    }
}

/// Integration mode for [`integrate_command`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    SecondOrder,
    /// Velocities jump to the command; constant-velocity pose integration.
    Instant,
}

/// Ground-truth kinematic state of the robot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub vdot: f64,
    pub omegadot: f64,
}

impl RobotState {
    pub fn at_rest(x: f64, y: f64, theta: f64) -> Self {
        RobotState { x, y, theta: wrap_angle(theta), ..Default::default() }
    }

    pub fn from_pose(p: Pose) -> Self {
        Self::at_rest(p.x, p.y, p.theta)
    }

    pub fn pose(&self) -> Pose {
        Pose { x: self.x, y: self.y, theta: self.theta }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.theta, self.v, self.omega, self.vdot, self.omegadot]
            .iter()
            .all(|f| f.is_finite())
    }

    /// Zeroes velocities and accelerations, keeping the pose.
    pub fn halted(&self) -> Self {
        RobotState::at_rest(self.x, self.y, self.theta)
    }
}

/// A discrete velocity command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub index: usize,
    pub a_v: f64,
    pub a_omega: f64,
}

impl Command {
    /// Resolves an action id against the action grid of `params`.
    pub fn from_index(index: usize, params: &DynParams) -> Result<Command> {
        if index == STOP_INDEX {
            return Ok(Command::stop());
        }
        if index >= NUM_MOTION_ACTIONS {
            return Err(Error::InvalidCommand(index));
        }
        let iv = index / ANGULAR_LEVELS;
        let iw = index % ANGULAR_LEVELS;
        Ok(Command {
            index,
            a_v: params.v_max * iv as f64 / (LINEAR_LEVELS - 1) as f64,
            a_omega: params.omega_max * (iw as f64 - 3.0) / 3.0,
        })
    }

    pub fn stop() -> Command {
        Command { index: STOP_INDEX, a_v: 0.0, a_omega: 0.0 }
    }

    pub fn is_stop(&self) -> bool {
        self.index == STOP_INDEX
    }

    /// Motion action id equivalent to this command's velocities (STOP maps to
    /// the zero-velocity action).
    pub fn motion_index(&self) -> usize {
        if self.is_stop() {
            3
        } else {
            self.index
        }
    }

    fn check(&self, params: &DynParams) -> Result<()> {
        if self.index > STOP_INDEX {
            return Err(Error::InvalidCommand(self.index));
        }
        if !(self.a_v.is_finite() && self.a_omega.is_finite()) {
            return Err(Error::NonFinite("command"));
        }
        let tol = 1e-9;
        if self.a_v.abs() > params.v_max + tol || self.a_omega.abs() > params.omega_max + tol {
            return Err(Error::InvalidCommand(self.index));
        }
        Ok(())
    }
}

/// The 28 motion commands: linear level outer, angular level inner.
pub fn action_space(params: &DynParams) -> Vec<Command> {
    (0..NUM_MOTION_ACTIONS)
        .map(|i| Command::from_index(i, params).expect("index in range"))
        .collect()
}

/// Largest `h * rate` of one explicit velocity update.
const MAX_STEP_RATE: f64 = 0.5;
const MAX_SUBCYCLES: usize = 4096;

#[derive(Clone, Copy)]
struct Channel {
    tau_acc: f64,
    tau_brake: f64,
    gamma_acc: f64,
    gamma_brake: f64,
    max: f64,
}

impl Channel {
    /// One symplectic-Euler substep of the velocity channel.
    fn advance(&self, vel: &mut f64, acc: &mut f64, command: f64, dt: f64) {
        let accelerating =
            command.abs() > vel.abs() && (*vel == 0.0 || command.signum() == vel.signum());
        let (tau, gamma) = if accelerating {
            (self.tau_acc, self.gamma_acc)
        } else {
            (self.tau_brake, self.gamma_brake)
        };
        // stiff parameter sets are sub-cycled so the explicit scheme stays stable
        let rate = gamma.max(0.5) * 2.0 / tau;
        let m = ((dt * rate / MAX_STEP_RATE).ceil() as usize).clamp(1, MAX_SUBCYCLES);
        let h = dt / m as f64;
        for _ in 0..m {
            let jerk = (command - *vel) / (tau * tau) - 2.0 * gamma / tau * *acc;
            *acc += h * jerk;
            *vel += h * *acc;
            if *vel > self.max {
                *vel = self.max;
                *acc = acc.min(0.0);
            } else if *vel < -self.max {
                *vel = -self.max;
                *acc = acc.max(0.0);
            }
        }
    }
}

fn channels(params: &DynParams) -> (Channel, Channel) {
    (
        Channel {
            tau_acc: params.tau_lin_acc,
            tau_brake: params.tau_lin_brake,
            gamma_acc: params.gamma_lin_acc,
            gamma_brake: params.gamma_lin_brake,
            max: params.v_max,
        },
        Channel {
            tau_acc: params.tau_ang_acc,
            tau_brake: params.tau_ang_brake,
            gamma_acc: params.gamma_ang_acc,
            gamma_brake: params.gamma_ang_brake,
            max: params.omega_max,
        },
    )
}

/// Advances one decision period, invoking `on_substep` after every substep.
///
/// Returning `false` from the callback stops the integration early; the state
/// reached so far is returned together with the number of completed substeps.
pub fn integrate_observed<F>(
    state: &RobotState,
    cmd: &Command,
    params: &DynParams,
    mode: Mode,
    mut on_substep: F,
) -> Result<(RobotState, u32)>
where
    F: FnMut(&RobotState) -> bool,
{
    params.validate()?;
    cmd.check(params)?;
    if !state.is_finite() {
        return Err(Error::NonFinite("robot state"));
    }
    let (lin, ang) = channels(params);
    let dt = params.substep_dt();
    let n = params.substeps_per_decision();
    let mut s = *state;
    if mode == Mode::Instant {
        s.v = cmd.a_v.clamp(-params.v_max, params.v_max);
        s.omega = cmd.a_omega.clamp(-params.omega_max, params.omega_max);
        s.vdot = 0.0;
        s.omegadot = 0.0;
    }
    for k in 0..n {
        if mode == Mode::SecondOrder {
            lin.advance(&mut s.v, &mut s.vdot, cmd.a_v, dt);
            ang.advance(&mut s.omega, &mut s.omegadot, cmd.a_omega, dt);
        }
        s.theta = wrap_angle(s.theta + dt * s.omega);
        let (sin, cos) = s.theta.sin_cos();
        s.x += dt * s.v * cos;
        s.y += dt * s.v * sin;
        if !s.is_finite() {
            return Err(Error::NonFinite("integrated state"));
        }
        if !on_substep(&s) {
            return Ok((s, k + 1));
        }
    }
    Ok((s, n))
}

/// Advances the state by one decision period under a held command.
pub fn integrate_command(
    state: &RobotState,
    cmd: &Command,
    params: &DynParams,
    mode: Mode,
) -> Result<RobotState> {
    integrate_observed(state, cmd, params, mode, |_| true).map(|(s, _)| s)
}

/// Collision-free forward rollout; returns the state after each command.
pub fn rollout_actions(
    p0: &RobotState,
    actions: &[Command],
    params: &DynParams,
    mode: Mode,
) -> Result<Vec<RobotState>> {
    if actions.is_empty() {
        return Err(Error::Empty("action sequence"));
    }
    let mut out = Vec::with_capacity(actions.len());
    let mut s = *p0;
    for a in actions {
        s = integrate_command(&s, a, params, mode)?;
        out.push(s);
    }
    Ok(out)
}

/// Velocity samples of a step response at substep resolution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Holds `cmd` from rest for `duration` seconds and samples `v`, `omega`.
pub fn step_response(
    cmd: &Command,
    params: &DynParams,
    mode: Mode,
    duration: f64,
) -> Result<StepResponse> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidParams("duration must be > 0".into()));
    }
    let periods = (duration * params.decision_hz as f64).ceil() as usize;
    let dt = params.substep_dt();
    let mut out = StepResponse { t: vec![0.0], v: vec![0.0], omega: vec![0.0] };
    let mut s = RobotState::default();
    let mut k = 0usize;
    for _ in 0..periods {
        let (next, _) = integrate_observed(&s, cmd, params, mode, |sub| {
            k += 1;
            out.t.push(k as f64 * dt);
            out.v.push(sub.v);
            out.omega.push(sub.omega);
            true
        })?;
        s = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_fixed_point() {
        let s = RobotState::at_rest(1.0, 2.0, 0.5);
        let p = DynParams::default();
        let cmd = Command::from_index(3, &p).unwrap();
        assert_eq!((cmd.a_v, cmd.a_omega), (0.0, 0.0));
        for mode in [Mode::SecondOrder, Mode::Instant] {
            assert_eq!(integrate_command(&s, &cmd, &p, mode).unwrap(), s);
        }
    }

    #[test]
    fn instant_constant_velocity() {
        let p = DynParams::default();
        let cmd = Command::from_index(24, &p).unwrap();
        assert_eq!((cmd.a_v, cmd.a_omega), (1.0, 0.0));
        let s = integrate_command(&RobotState::default(), &cmd, &p, Mode::Instant).unwrap();
        assert!((s.x - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((s.y, s.theta, s.v), (0.0, 0.0, 1.0));
    }

    #[test]
    fn action_grid_layout() {
        let p = DynParams::default();
        let a = action_space(&p);
        assert_eq!(a.len(), 28);
        assert!(a.iter().any(|c| (c.a_v - 1.0 / 3.0).abs() < 1e-12
            && (c.a_omega + 2.0 / 3.0).abs() < 1e-12));
        for (i, c) in a.iter().enumerate() {
            assert_eq!(c.index, i);
        }
        let half = DynParams { v_max: 0.5, ..p };
        for (c, h) in a.iter().zip(action_space(&half)) {
            assert_eq!(h.a_v, c.a_v * 0.5);
            assert_eq!(h.a_omega, c.a_omega);
        }
    }

    #[test]
    fn invalid_index_and_state_rejected() {
        let p = DynParams::default();
        assert!(matches!(Command::from_index(29, &p), Err(Error::InvalidCommand(29))));
        let mut s = RobotState::default();
        s.v = f64::NAN;
        let cmd = Command::from_index(0, &p).unwrap();
        assert!(integrate_command(&s, &cmd, &p, Mode::SecondOrder).is_err());
        let bogus = Command { index: 40, a_v: 0.0, a_omega: 0.0 };
        assert!(integrate_command(&RobotState::default(), &bogus, &p, Mode::SecondOrder).is_err());
    }

    #[test]
    fn stop_maps_to_zero_velocity() {
        let p = DynParams::default();
        let s = Command::from_index(STOP_INDEX, &p).unwrap();
        assert!(s.is_stop());
        assert_eq!(s.motion_index(), 3);
    }

    #[test]
    fn params_validation() {
        assert!(DynParams::default().validate().is_ok());
        let bad = DynParams { substep_hz: 31, ..DynParams::default() };
        assert!(bad.validate().is_err());
        let bad = DynParams { tau_lin_acc: 0.0, ..DynParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn params_json_is_flat() {
        let v = serde_json::to_value(DynParams::default()).unwrap();
        let obj = v.as_object().unwrap();
        assert_eq!(obj.len(), 12);
        assert!(obj.contains_key("gamma_ang_brake"));
        let partial: DynParams = serde_json::from_str(r#"{"v_max": 0.5}"#).unwrap();
        assert_eq!(partial.v_max, 0.5);
        assert!(serde_json::from_str::<DynParams>(r#"{"vmax": 0.5}"#).is_err());
    }
}
