//! One-step action cost of the Fast-Marching expert.

use super::fmm::TimeField;
use crate::dynamics::{action_space, integrate_observed, Command, DynParams, Mode, RobotState};
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::world::OccupancyGrid;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w_pos: f64,
    pub w_angle: f64,
    pub w_slow: f64,
    pub w_rot: f64,
    pub w_coll: f64,
    /// Braking strength of the slowdown term, (m/s) per second of travel time.
    pub beta: f64,
    /// Wall distance (m) below which the planning speed field slows down.
    pub k: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { w_pos: 10.0, w_angle: 0.1, w_slow: 1.0, w_rot: 1e-3, w_coll: 1e3, beta: 0.5, k: 0.5 }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w_pos, self.w_angle, self.w_slow, self.w_rot, self.w_coll, self.beta];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidParams("cost weights must be >= 0 and k > 0".into()));
        }
        Ok(())
    }
}

/// Individual weighted terms of one action cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub position: f64,
    pub angle: f64,
    pub slowdown: f64,
    pub rotation: f64,
    pub collision: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.position + self.angle + self.slowdown + self.rotation + self.collision
    }
}

/// Everything the cost needs besides state and action.
#[derive(Clone, Copy)]
pub struct CostModel<'a> {
    pub field: &'a TimeField,
    pub grid: &'a OccupancyGrid,
    pub weights: &'a CostWeights,
    pub dynamics: &'a DynParams,
    pub mode: Mode,
    pub robot_radius: f64,
}

impl CostModel<'_> {
    /// Predicts one decision period ahead; returns the end state and whether
    /// the swept footprint touched an obstacle.
    pub fn predict(&self, p: &RobotState, a: &Command) -> Result<(RobotState, bool)> {
        let mut hit = false;
        let (grid, r) = (self.grid, self.robot_radius);
        let (end, _) = integrate_observed(p, a, self.dynamics, self.mode, |s| {
            hit |= grid.disc_collides(s.x, s.y, r);
            true
        })?;
        Ok((end, hit))
    }

    /// Cost terms of the state reached from `p` under `a`.
    pub fn terms(&self, p: &RobotState, a: &Command) -> Result<CostTerms> {
        let cmd = Command::from_index(a.motion_index(), self.dynamics)?;
        let (p1, hit) = self.predict(p, &cmd)?;
        Ok(self.terms_at(&p1, hit))
    }

    /// Cost terms of an already predicted state.
    pub fn terms_at(&self, p1: &RobotState, hit: bool) -> CostTerms {
        let w = self.weights;
        let t = self.field.value_at(p1.x, p1.y);
        let collision = if hit { w.w_coll } else { 0.0 };
        let rotation = w.w_rot * p1.omega.abs();
        if !t.is_finite() {
            return CostTerms { position: w.w_coll, angle: 0.0, slowdown: 0.0, rotation, collision };
        }
        let g = self.field.gradient_at(p1.x, p1.y);
        let angle = if g[0].hypot(g[1]) > 1e-9 {
            w.w_angle * wrap_angle(p1.theta - (-g[1]).atan2(-g[0])).abs()
        } else {
            0.0
        };
        CostTerms {
            position: w.w_pos * t,
            angle,
            slowdown: w.w_slow * (p1.v - w.beta * t).max(0.0),
            rotation,
            collision,
        }
    }

    pub fn cost(&self, p: &RobotState, a: &Command) -> Result<f64> {
        Ok(self.terms(p, a)?.total())
    }

    /// Lowest-cost motion command; ties go to the lowest index.
    pub fn best_action(&self, p: &RobotState) -> Result<(Command, f64)> {
        let mut best: Option<(Command, f64)> = None;
        for c in action_space(self.dynamics) {
            let v = self.cost(p, &c)?;
            if best.map(|(_, b)| v < b).unwrap_or(true) {
                best = Some((c, v));
            }
        }
        Ok(best.expect("action space is never empty"))
    }
}

/// Free-function form of [`CostModel::cost`].
pub fn action_cost(p: &RobotState, a: &Command, model: &CostModel<'_>) -> Result<f64> {
    model.cost(p, a)
}
