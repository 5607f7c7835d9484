//! Sensor models: range scan, dead-reckoned odometry, localization.

use super::grid::OccupancyGrid;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Gaussian noise parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: f64,
    pub std: f64,
}

impl NoiseSpec {
    pub fn new(mean: f64, std: f64) -> Self {
        NoiseSpec { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub scan_beams: usize,
    pub range_max: f64,
    /// Blind sectors `[start, end]` in radians relative to the heading;
    /// beams inside report `range_max`.
    pub dead_zones: Vec<[f64; 2]>,
    /// Per-decision-step odometry drift on x and y (meters).
    pub odom_noise: NoiseSpec,
    /// Per-step heading drift std (radians).
    pub odom_theta_std: f64,
    pub odom_vel_std: f64,
    pub loc_std: f64,
    pub loc_theta_std: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            scan_beams: 128,
            range_max: 4.0,
            dead_zones: Vec::new(),
            odom_noise: NoiseSpec::default(),
            odom_theta_std: 0.0,
            odom_vel_std: 0.0,
            loc_std: 0.0,
            loc_theta_std: 0.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        let stds = [self.odom_noise.std, self.odom_theta_std, self.odom_vel_std, self.loc_std, self.loc_theta_std];
        if stds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || !self.odom_noise.mean.is_finite() {
            return Err(Error::InvalidParams("noise std must be finite and >= 0".into()));
        }
        if self.scan_beams == 0 || !(self.range_max > 0.0) {
            return Err(Error::InvalidParams("scan needs beams > 0 and range_max > 0".into()));
        }
        Ok(())
    }

    /// Relative angle of beam `k` (beam 0 points along the heading).
    pub fn beam_angle(&self, k: usize) -> f64 {
        wrap_angle(2.0 * PI * k as f64 / self.scan_beams as f64)
    }

    pub fn in_dead_zone(&self, rel_angle: f64) -> bool {
        self.dead_zones.iter().any(|z| in_sector(rel_angle, z[0], z[1]))
    }
}

/// Whether `angle` lies in the counter-clockwise sector from `start` to `end`.
pub fn in_sector(angle: f64, start: f64, end: f64) -> bool {
    let width = (end - start).rem_euclid(2.0 * PI);
    let d = (angle - start).rem_euclid(2.0 * PI);
    d <= width + 1e-12
}

/// Distance along a ray to the first occupied cell (DDA traversal), capped.
pub fn cast_ray(grid: &OccupancyGrid, x: f64, y: f64, angle: f64, range_max: f64) -> f64 {
    let res = grid.resolution();
    let (dy, dx) = angle.sin_cos();
    let (mut i, mut j) = grid.world_to_cell_signed(x, y);
    if grid.occupied_signed(i, j) {
        return 0.0;
    }
    let o = grid.origin();
    let step_i: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_j: i64 = if dy > 0.0 { 1 } else { -1 };
    let next_boundary = |c: i64, step: i64, origin: f64, p: f64, d: f64| -> (f64, f64) {
        if d.abs() < 1e-15 {
            return (f64::INFINITY, f64::INFINITY);
        }
        let edge = origin + (c + if step > 0 { 1 } else { 0 }) as f64 * res;
        ((edge - p) / d, res / d.abs())
    };
    let (mut t_max_x, t_delta_x) = next_boundary(i, step_i, o[0], x, dx);
    let (mut t_max_y, t_delta_y) = next_boundary(j, step_j, o[1], y, dy);
    loop {
        let t = if t_max_x < t_max_y {
            i += step_i;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            j += step_j;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t >= range_max {
            return range_max;
        }
        if grid.occupied_signed(i, j) {
            return t.max(0.0);
        }
    }
}

pub(crate) fn scan_unchecked(grid: &OccupancyGrid, pose: &Pose, cfg: &SensorConfig) -> Vec<f64> {
    (0..cfg.scan_beams)
        .map(|k| {
            let rel = cfg.beam_angle(k);
            if cfg.in_dead_zone(rel) {
                cfg.range_max
            } else {
                cast_ray(grid, pose.x, pose.y, pose.theta + rel, cfg.range_max)
            }
        })
        .collect()
}

/// Equiangular range scan from `pose`.
pub fn raycast_scan(grid: &OccupancyGrid, pose: &Pose, cfg: &SensorConfig) -> Result<Vec<f64>> {
    if grid.occupied_at(pose.x, pose.y) {
        return Err(Error::Infeasible("scan origin lies in an occupied cell".into()));
    }
    Ok(scan_unchecked(grid, pose, cfg))
}

/// Everything a policy sees at one decision step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scan: Vec<f64>,
    /// Dead-reckoned `(x, y, theta)` in the episode frame.
    pub odom_pose: [f64; 3],
    /// Measured `(v, omega)`.
    pub odom_vel: [f64; 2],
    /// Independent noisy pose in the episode frame.
    pub loc_pose: [f64; 3],
    /// Static goal `(rho, phi)` in the episode frame.
    pub goal: [f64; 2],
    pub prev_action: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_room_returns_range_max() {
        let g = OccupancyGrid::new(100, 100, 0.1, [0.0, 0.0]).unwrap();
        let cfg = SensorConfig::default();
        let s = raycast_scan(&g, &Pose::new(5.0, 5.0, 0.3), &cfg).unwrap();
        assert_eq!(s.len(), 128);
        assert!(s.iter().all(|r| *r == cfg.range_max));
    }

    #[test]
    fn wall_distance_along_normal() {
        let mut g = OccupancyGrid::new(60, 60, 0.1, [0.0, 0.0]).unwrap();
        for j in 0..60 {
            g.set(40, j, true);
        }
        let cfg = SensorConfig::default();
        let s = raycast_scan(&g, &Pose::new(3.0, 3.0, 0.0), &cfg).unwrap();
        assert!((s[0] - 1.0).abs() <= 0.1, "{}", s[0]);
        // the backward beam leaves the map, which reads as occupied
        assert!((s[64] - 3.0).abs() <= 0.1, "{}", s[64]);
    }

    #[test]
    fn dead_zone_masks_obstacles() {
        let mut g = OccupancyGrid::new(60, 60, 0.1, [0.0, 0.0]).unwrap();
        for j in 0..60 {
            g.set(35, j, true);
        }
        let cfg = SensorConfig {
            dead_zones: vec![[(-15f64).to_radians(), 15f64.to_radians()]],
            ..Default::default()
        };
        let s = raycast_scan(&g, &Pose::new(3.0, 3.0, 0.0), &cfg).unwrap();
        for (k, r) in s.iter().enumerate() {
            if cfg.in_dead_zone(cfg.beam_angle(k)) {
                assert_eq!(*r, cfg.range_max);
            }
        }
        assert!(cfg.in_dead_zone(0.0));
        assert!(!cfg.in_dead_zone(0.5));
        assert!(s[8] < cfg.range_max);
    }

    #[test]
    fn scan_from_occupied_cell_fails() {
        let mut g = OccupancyGrid::new(10, 10, 0.1, [0.0, 0.0]).unwrap();
        g.set(5, 5, true);
        assert!(raycast_scan(&g, &Pose::new(0.55, 0.55, 0.0), &SensorConfig::default()).is_err());
    }

    #[test]
    fn sector_wraps_through_pi() {
        assert!(in_sector(PI, 3.0, -3.0));
        assert!(in_sector(-3.1, 3.0, -3.0));
        assert!(!in_sector(0.0, 3.0, -3.0));
    }
}
