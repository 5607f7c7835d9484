//! Reference recurrent estimator whose state plays the role of an agent's
//! hidden memory in the probing and ablation experiments.
//!
//! The state fuses dead-reckoned odometry with noisy localization through a
//! complementary filter, tracks velocities, keeps a short ring of past
//! positions and an ego-centric occupancy accumulator fed by the scan.

use crate::dynamics::{Command, DynParams, NUM_ACTIONS};
use crate::geometry::{polar_to_cartesian, wrap_angle, Pose};
use crate::world::{Observation, SensorConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Weight of the localization correction per step.
    pub kappa: f64,
    pub ring_len: usize,
    /// Side of the square occupancy accumulator, in cells.
    pub occ_cells: usize,
    pub occ_resolution: f64,
    /// Retention of unobserved accumulator cells per step. Cells hold +1 for
    /// a hit, -1 for a beam passing through and 0 when nothing is known.
    pub occ_decay: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { kappa: 0.2, ring_len: 3, occ_cells: 15, occ_resolution: 0.2, occ_decay: 0.5 }
    }
}

/// Layout offsets of the latent vector.
pub mod layout {
    /// Fused pose `x, y, cos, sin`.
    pub const POSE: usize = 0;
    /// `v, omega` from odometry.
    pub const VEL: usize = 4;
    /// Episode-frame velocity `vx, vy`.
    pub const VEL_XY: usize = 6;
    /// Rate of change of `vx, vy`.
    pub const ACC_XY: usize = 8;
    /// Previous command `a_v, a_omega, stop`.
    pub const PREV_CMD: usize = 10;
    /// Goal in cartesian episode coordinates.
    pub const GOAL: usize = 13;
    /// Start of the position ring.
    pub const RING: usize = 15;
}

#[derive(Clone, Debug)]
pub struct ReferenceEstimator {
    cfg: EstimatorConfig,
    nominal: DynParams,
    scan_cfg: SensorConfig,
    pose: Pose,
    prev_odom: Option<[f64; 3]>,
    vel: [f64; 2],
    vel_xy: [f64; 2],
    acc_xy: [f64; 2],
    prev_cmd: [f64; 3],
    goal: [f64; 2],
    ring: Vec<[f64; 2]>,
    occ: Vec<f64>,
    occ_pose: Pose,
}

impl ReferenceEstimator {
    pub fn new(cfg: EstimatorConfig, nominal: DynParams, scan_cfg: SensorConfig) -> Self {
        let n = cfg.occ_cells * cfg.occ_cells;
        let ring = vec![[0.0; 2]; cfg.ring_len];
        ReferenceEstimator {
            cfg,
            nominal,
            scan_cfg,
            pose: Pose::IDENTITY,
            prev_odom: None,
            vel: [0.0; 2],
            vel_xy: [0.0; 2],
            acc_xy: [0.0; 2],
            prev_cmd: [0.0; 3],
            goal: [0.0; 2],
            ring,
            occ: vec![0.0; n],
            occ_pose: Pose::IDENTITY,
        }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        layout::RING + 2 * self.cfg.ring_len + self.occ.len()
    }

    /// Offset of the occupancy block inside the latent vector.
    pub fn occ_offset(&self) -> usize {
        layout::RING + 2 * self.cfg.ring_len
    }

    /// Zeroes the whole state.
    pub fn reset(&mut self) {
        *self = ReferenceEstimator::new(self.cfg.clone(), self.nominal, self.scan_cfg.clone());
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occ
    }

    /// Folds one observation into the state.
    pub fn update(&mut self, obs: &Observation, dt: f64) {
        let odom = obs.odom_pose;
        let delta = match self.prev_odom {
            Some(p) => [odom[0] - p[0], odom[1] - p[1], wrap_angle(odom[2] - p[2])],
            None => [0.0; 3],
        };
        self.prev_odom = Some(odom);
        let pred = [self.pose.x + delta[0], self.pose.y + delta[1], self.pose.theta + delta[2]];
        let k = self.cfg.kappa;
        let loc = obs.loc_pose;
        let fused = Pose::new(
            pred[0] + k * (loc[0] - pred[0]),
            pred[1] + k * (loc[1] - pred[1]),
            pred[2] + k * wrap_angle(loc[2] - pred[2]),
        );

        self.vel = obs.odom_vel;
        let (s, c) = fused.theta.sin_cos();
        let vxy = [self.vel[0] * c, self.vel[0] * s];
        self.acc_xy = [(vxy[0] - self.vel_xy[0]) / dt, (vxy[1] - self.vel_xy[1]) / dt];
        self.vel_xy = vxy;
        let cmd = Command::from_index(obs.prev_action.min(NUM_ACTIONS - 1), &self.nominal)
            .unwrap_or_else(|_| Command::stop());
        self.prev_cmd = [
            cmd.a_v / self.nominal.v_max,
            cmd.a_omega / self.nominal.omega_max,
            f64::from(u8::from(cmd.is_stop())),
        ];
        self.goal = polar_to_cartesian(obs.goal[0], obs.goal[1]);
        if !self.ring.is_empty() {
            self.ring.rotate_right(1);
            self.ring[0] = [self.pose.x, self.pose.y];
        }
        self.pose = fused;
        self.update_occupancy(&obs.scan);
    }

    fn update_occupancy(&mut self, scan: &[f64]) {
        let n = self.cfg.occ_cells;
        let res = self.cfg.occ_resolution;
        let half = n as f64 * res / 2.0;
        let rel = self.occ_pose.inverse().compose(&self.pose);
        let decay = self.cfg.occ_decay;
        let cell_of = |x: f64, y: f64| -> Option<usize> {
            let i = ((x + half) / res).floor();
            let j = ((y + half) / res).floor();
            (i >= 0.0 && j >= 0.0 && (i as usize) < n && (j as usize) < n).then(|| j as usize * n + i as usize)
        };
        let mut shifted = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let c = [-half + (i as f64 + 0.5) * res, -half + (j as f64 + 0.5) * res];
                let old = rel.transform_point(c);
                if let Some(k) = cell_of(old[0], old[1]) {
                    shifted[j * n + i] = decay * self.occ[k];
                }
            }
        }
        let beams = scan.len();
        let range_max = self.scan_cfg.range_max;
        for (k, &r) in scan.iter().enumerate() {
            if r >= range_max - 1e-9 {
                continue;
            }
            let a = 2.0 * std::f64::consts::PI * k as f64 / beams as f64;
            let (s, c) = a.sin_cos();
            let mut d = 0.5 * res;
            while d < r - 0.5 * res {
                match cell_of(d * c, d * s) {
                    Some(idx) => shifted[idx] = -1.0,
                    None => break,
                }
                d += 0.5 * res;
            }
            if let Some(idx) = cell_of(r * c, r * s) {
                shifted[idx] = 1.0;
            }
        }
        self.occ = shifted;
        self.occ_pose = self.pose;
    }

    /// Flat latent vector; see [`layout`].
    pub fn latent(&self) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.dim());
        let (s, c) = self.pose.theta.sin_cos();
        h.extend_from_slice(&[self.pose.x, self.pose.y, c, s]);
        h.extend_from_slice(&self.vel);
        h.extend_from_slice(&self.vel_xy);
        h.extend_from_slice(&self.acc_xy);
        h.extend_from_slice(&self.prev_cmd);
        h.extend_from_slice(&self.goal);
        for p in &self.ring {
            h.extend_from_slice(p);
        }
        h.extend_from_slice(&self.occ);
        h
    }
}
