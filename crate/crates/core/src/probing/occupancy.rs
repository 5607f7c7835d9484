//! Local occupancy probing: an affine score per cell of an ego-centric
//! window, thresholded, with per-cell accuracy and world-frame aggregation.

use super::dataset::{LatentDataset, LatentEpisode, Split};
use super::linalg::{AffineMap, RidgeAccumulator, Standardizer};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::io::RasterHeader;
use crate::world::{OccupancyGrid, TaskSet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyProbeConfig {
    /// Side of the ego-centric window in cells.
    pub cells: usize,
    pub resolution: f64,
    pub lambda: f64,
    pub threshold: f64,
}

impl Default for OccupancyProbeConfig {
    fn default() -> Self {
        OccupancyProbeConfig { cells: 30, resolution: 0.1, lambda: 1e-3, threshold: 0.5 }
    }
}

impl OccupancyProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 || !(self.resolution > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::InvalidParams("occupancy window must be non-empty".into()));
        }
        Ok(())
    }

    /// Agent-frame centre of window cell `(i, j)`; `i` runs forward, `j` left.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let half = self.cells as f64 * self.resolution / 2.0;
        [-half + (i as f64 + 0.5) * self.resolution, -half + (j as f64 + 0.5) * self.resolution]
    }

    /// Bearing of a window cell relative to the heading.
    pub fn cell_bearing(&self, i: usize, j: usize) -> f64 {
        let c = self.cell_center(i, j);
        c[1].atan2(c[0])
    }
}

/// Ground-truth window around `pose`, row-major with `j * cells + i`.
pub fn occupancy_target(grid: &OccupancyGrid, pose: &Pose, cfg: &OccupancyProbeConfig) -> Vec<f64> {
    let n = cfg.cells;
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let w = pose.transform_point(cfg.cell_center(i, j));
            out[j * n + i] = f64::from(u8::from(grid.occupied_at(w[0], w[1])));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyProbe {
    pub cfg: OccupancyProbeConfig,
    pub scaler: Standardizer,
    pub map: AffineMap,
}

impl OccupancyProbe {
    /// Per-cell scores; a cell is predicted occupied when its score is
    /// above the threshold.
    pub fn scores(&self, h: &[f64]) -> Vec<f64> {
        self.map.apply(&self.scaler.apply(h))
    }

    pub fn predict(&self, h: &[f64]) -> Vec<bool> {
        self.scores(h).into_iter().map(|s| s > self.cfg.threshold).collect()
    }
}

fn grid_for<'a>(tasks: &'a TaskSet, e: &LatentEpisode) -> Result<&'a std::sync::Arc<OccupancyGrid>> {
    tasks.map(&e.meta.map_id)
}

pub fn train_occupancy_probe(ds: &LatentDataset, tasks: &TaskSet, cfg: &OccupancyProbeConfig) -> Result<OccupancyProbe> {
    cfg.validate()?;
    let train: Vec<&LatentEpisode> = ds.episodes_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    let scaler = Standardizer::fit(train.iter().flat_map(|e| e.steps.iter().map(|s| s.h.as_slice())), ds.dim)?;
    let outputs = cfg.cells * cfg.cells;
    let parts = train
        .par_iter()
        .map(|e| -> Result<RidgeAccumulator> {
            let grid = grid_for(tasks, e)?;
            let mut acc = RidgeAccumulator::new(ds.dim, outputs);
            for k in 0..e.steps.len() {
                let y = occupancy_target(grid, &e.world_pose(k), cfg);
                acc.add(&scaler.apply(&e.steps[k].h), &y);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = RidgeAccumulator::new(ds.dim, outputs);
    for p in &parts {
        acc.merge(p);
    }
    Ok(OccupancyProbe { cfg: cfg.clone(), scaler, map: acc.solve(cfg.lambda)? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub splits: Vec<Split>,
    pub rows: usize,
    pub accuracy: f64,
    /// Accuracy of always answering "free".
    pub all_free_accuracy: f64,
    /// Row-major per-cell accuracy, `j * cells + i`.
    pub cell_accuracy: Vec<f64>,
    pub cells: usize,
    pub resolution: f64,
}

impl OccupancyReport {
    /// Window cell with the lowest accuracy.
    pub fn worst_cell(&self) -> (usize, usize, f64) {
        let (k, a) = self
            .cell_accuracy
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, a)| (k, *a))
            .unwrap_or((0, f64::NAN));
        (k % self.cells, k / self.cells, a)
    }

    /// Header for the accuracy raster in the agent frame.
    pub fn raster_header(&self) -> RasterHeader {
        let half = self.cells as f64 * self.resolution / 2.0;
        let mut h = RasterHeader::new(self.cells, self.cells, self.resolution, [-half, -half]);
        h.label = Some("occupancy probe accuracy (agent frame)".into());
        h
    }
}

/// Accuracy over every step of the episodes in `splits`.
pub fn evaluate_occupancy(
    probe: &OccupancyProbe,
    ds: &LatentDataset,
    tasks: &TaskSet,
    splits: &[Split],
) -> Result<OccupancyReport> {
    let cfg = &probe.cfg;
    let cells = cfg.cells * cfg.cells;
    let eps: Vec<&LatentEpisode> = ds.episodes.iter().filter(|e| splits.contains(&e.meta.split)).collect();
    let parts = eps
        .par_iter()
        .map(|e| -> Result<(Vec<f64>, f64, usize)> {
            let grid = grid_for(tasks, e)?;
            let mut correct = vec![0.0; cells];
            let mut free = 0.0;
            for k in 0..e.steps.len() {
                let y = occupancy_target(grid, &e.world_pose(k), cfg);
                let p = probe.predict(&e.steps[k].h);
                for c in 0..cells {
                    let truth = y[c] > 0.5;
                    correct[c] += f64::from(u8::from(p[c] == truth));
                    free += f64::from(u8::from(!truth));
                }
            }
            Ok((correct, free, e.steps.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut correct = vec![0.0; cells];
    let mut free = 0.0;
    let mut rows = 0;
    for (c, f, r) in parts {
        correct.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        free += f;
        rows += r;
    }
    if rows == 0 {
        return Err(Error::Empty("evaluation rows"));
    }
    let cell_accuracy: Vec<f64> = correct.iter().map(|c| c / rows as f64).collect();
    Ok(OccupancyReport {
        splits: splits.to_vec(),
        rows,
        accuracy: cell_accuracy.iter().sum::<f64>() / cells as f64,
        all_free_accuracy: free / (rows * cells) as f64,
        cell_accuracy,
        cells: cfg.cells,
        resolution: cfg.resolution,
    })
}

/// Mean predicted occupancy per map cell over every step of `map_id` in
/// `split`, placed with the onboard pose estimate. Unvisited cells are NaN.
pub fn aggregate_on_map(
    probe: &OccupancyProbe,
    ds: &LatentDataset,
    grid: &OccupancyGrid,
    map_id: &str,
    split: Split,
) -> Vec<f64> {
    let cfg = &probe.cfg;
    let mut sum = vec![0.0; grid.len()];
    let mut count = vec![0.0; grid.len()];
    for e in ds.episodes_in(split).filter(|e| e.meta.map_id == map_id) {
        for s in &e.steps {
            let o = s.onboard;
            let pose = e.meta.start_pose.compose(&Pose::new(o[0], o[1], o[2]));
            let pred = probe.predict(&s.h);
            for j in 0..cfg.cells {
                for i in 0..cfg.cells {
                    let w = pose.transform_point(cfg.cell_center(i, j));
                    if let Some((ci, cj)) = grid.world_to_cell(w[0], w[1]) {
                        let k = grid.index(ci, cj);
                        sum[k] += f64::from(u8::from(pred[j * cfg.cells + i]));
                        count[k] += 1.0;
                    }
                }
            }
        }
    }
    sum.iter().zip(&count).map(|(s, c)| if *c > 0.0 { s / c } else { f64::NAN }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_ego_centric() {
        let mut g = OccupancyGrid::new(60, 60, 0.1, [0.0, 0.0]).unwrap();
        g.set(40, 30, true);
        let cfg = OccupancyProbeConfig::default();
        let t = occupancy_target(&g, &Pose::new(3.0, 3.0, 0.0), &cfg);
        // obstacle 1 m ahead
        assert_eq!(t[15 * 30 + 25], 1.0);
        let t = occupancy_target(&g, &Pose::new(3.0, 3.0, std::f64::consts::PI), &cfg);
        assert_eq!(t[15 * 30 + 25], 0.0);
        assert_eq!(t.iter().sum::<f64>(), 1.0);
        assert!(cfg.cell_bearing(29, 15).abs() < 0.1);
    }
}
