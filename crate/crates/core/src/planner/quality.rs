//! Planning-quality series and its kernel-density heatmap.

use super::cost::{CostModel, CostTerms};
use crate::error::{Error, Result};
use crate::io::RasterHeader;
use crate::world::TrajectoryLog;
use serde::{Deserialize, Serialize};

/// `M(t) = C(p_{t+1}, a_{t+1}) - C(p_t, a_t)` for every step but the last.
pub fn planning_quality(log: &TrajectoryLog, model: &CostModel<'_>) -> Result<Vec<f64>> {
    Ok(step_costs(log, model)?.windows(2).map(|w| w[1].total() - w[0].total()).collect())
}

/// Cost terms of every logged (state, action) pair.
pub fn step_costs(log: &TrajectoryLog, model: &CostModel<'_>) -> Result<Vec<CostTerms>> {
    log.steps.iter().map(|s| model.terms(&s.state, &s.command)).collect()
}

/// A quality value at a world position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualitySample {
    pub x: f64,
    pub y: f64,
    pub m: f64,
}

/// Pairs each `M(t)` with the position the robot had at step `t`.
pub fn quality_samples(log: &TrajectoryLog, m: &[f64]) -> Vec<QualitySample> {
    log.steps.iter().zip(m).map(|(s, &m)| QualitySample { x: s.state.x, y: s.state.y, m }).collect()
}

/// Positive and negative density rasters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub header: RasterHeader,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Gaussian kernel density of `max(M, 0)` and `max(-M, 0)` evaluated at the
/// cell centres of a `width x height` raster.
pub fn quality_heatmap(
    samples: &[QualitySample],
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    sigma: f64,
) -> Result<Heatmap> {
    if !(sigma > 0.0 && sigma.is_finite()) || !(resolution > 0.0) {
        return Err(Error::InvalidParams("sigma and resolution must be > 0".into()));
    }
    let mut pos = vec![0.0; width * height];
    let mut neg = vec![0.0; width * height];
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let reach = (4.0 * sigma / resolution).ceil() as i64;
    for s in samples {
        if !s.m.is_finite() || s.m == 0.0 {
            continue;
        }
        let target = if s.m > 0.0 { &mut pos } else { &mut neg };
        let w = s.m.abs() * norm;
        // fractional cell coordinates keep the kernel exact under whole-cell shifts
        let fi = (s.x - origin[0]) / resolution - 0.5;
        let fj = (s.y - origin[1]) / resolution - 0.5;
        let (ci, cj) = (fi.round() as i64, fj.round() as i64);
        for j in (cj - reach).max(0)..=(cj + reach).min(height as i64 - 1) {
            for i in (ci - reach).max(0)..=(ci + reach).min(width as i64 - 1) {
                let dx = (i as f64 - fi) * resolution;
                let dy = (j as f64 - fj) * resolution;
                let r2 = dx * dx + dy * dy;
                target[j as usize * width + i as usize] += w * (-r2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let mut header = RasterHeader::new(width, height, resolution, origin);
    header.label = Some("quality_density".into());
    Ok(Heatmap { header, positive: pos, negative: neg })
}
