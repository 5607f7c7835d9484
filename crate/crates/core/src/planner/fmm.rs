//! First-order Fast Marching solver for `|grad T| * speed = 1`.

use crate::error::{Error, Result};
use crate::io::RasterHeader;
use crate::world::OccupancyGrid;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Speed field used by the solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedModel {
    /// `v_max` on every free cell (geodesic distance / v_max).
    Uniform { v_max: f64 },
    /// `v_max * min(1, d / k)` with `d` the distance to the nearest wall.
    /// Cells whose nearest wall is closer than `clearance` only get a small
    /// floor speed, so the field avoids gaps the robot cannot pass.
    WallSlowdown {
        v_max: f64,
        k: f64,
        #[serde(default)]
        clearance: f64,
    },
}

/// Speed fraction left on cells inside the clearance band.
const BLOCKED_SPEED: f64 = 0.02;

impl SpeedModel {
    pub fn wall_slowdown(v_max: f64) -> Self {
        SpeedModel::WallSlowdown { v_max, k: 0.5, clearance: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SpeedModel::Uniform { v_max } => v_max > 0.0 && v_max.is_finite(),
            SpeedModel::WallSlowdown { v_max, k, clearance } => {
                v_max > 0.0 && v_max.is_finite() && k > 0.0 && k.is_finite() && clearance >= 0.0 && clearance.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams("speed model needs v_max > 0, k > 0 and clearance >= 0".into()))
        }
    }
}

/// Per-cell speed; zero on occupied cells.
pub fn speed_field(grid: &OccupancyGrid, model: SpeedModel) -> Vec<f64> {
    match model {
        SpeedModel::Uniform { v_max } => grid.cells().iter().map(|&o| if o { 0.0 } else { v_max }).collect(),
        SpeedModel::WallSlowdown { v_max, k, clearance } => {
            // clearance is measured between cell centres; half a cell brings it to the wall face
            let half = 0.5 * grid.resolution();
            grid.clearance()
                .iter()
                .zip(grid.cells())
                .map(|(d, &o)| {
                    if o {
                        0.0
                    } else if d - half < clearance {
                        v_max * BLOCKED_SPEED.min((d / k).min(1.0))
                    } else {
                        v_max * (d / k).min(1.0)
                    }
                })
                .collect()
        }
    }
}

/// Time-to-goal raster with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeField {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    values: Vec<f64>,
    grad: Vec<[f64; 2]>,
    goal: [f64; 2],
    goal_cell: (usize, usize),
}

#[derive(Clone, Copy, PartialEq)]
struct Item {
    t: f64,
    idx: usize,
}

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Radius, in cells, of the exactly initialised disc around the goal.
const SEED_RADIUS: usize = 8;

/// Solves the Eikonal equation from the goal cell over a speed raster.
///
/// 4-neighbour upwind update; cells with zero speed are never reached.
pub fn fast_march(width: usize, height: usize, h: f64, speed: &[f64], goal: (usize, usize)) -> Vec<f64> {
    let n = width * height;
    let mut t = vec![f64::INFINITY; n];
    let mut accepted = vec![false; n];
    let mut heap = BinaryHeap::new();
    let g = goal.1 * width + goal.0;
    t[g] = 0.0;
    heap.push(Item { t: 0.0, idx: g });
    // exact straight-line times on a small disc remove the point-source error
    let r = SEED_RADIUS as i64;
    let mut seeded = vec![false; n];
    for dj in -r..=r {
        for di in -r..=r {
            let (i, j) = (goal.0 as i64 + di, goal.1 as i64 + dj);
            if (di == 0 && dj == 0) || di * di + dj * dj > r * r || i < 0 || j < 0 || i >= width as i64 || j >= height as i64 {
                continue;
            }
            let clear = (goal.1 as i64).min(j)..=(goal.1 as i64).max(j);
            let visible = clear.clone().all(|jj| {
                ((goal.0 as i64).min(i)..=(goal.0 as i64).max(i)).all(|ii| speed[jj as usize * width + ii as usize] > 0.0)
            });
            if !visible {
                continue;
            }
            let k = j as usize * width + i as usize;
            let d = h * ((di * di + dj * dj) as f64).sqrt();
            t[k] = d * 0.5 * (1.0 / speed[g] + 1.0 / speed[k]);
            seeded[k] = true;
            heap.push(Item { t: t[k], idx: k });
        }
    }
    while let Some(Item { t: tv, idx }) = heap.pop() {
        if accepted[idx] || tv > t[idx] {
            continue;
        }
        accepted[idx] = true;
        let (i, j) = (idx % width, idx / width);
        let mut relax = |ni: usize, nj: usize| {
            let k = nj * width + ni;
            if accepted[k] || seeded[k] || speed[k] <= 0.0 {
                return;
            }
            let known = |a: Option<usize>| a.filter(|&q| accepted[q]).map_or(f64::INFINITY, |q| t[q]);
            let a = known((ni > 0).then(|| k - 1)).min(known((ni + 1 < width).then(|| k + 1)));
            let b = known((nj > 0).then(|| k - width)).min(known((nj + 1 < height).then(|| k + width)));
            let step = h / speed[k];
            let cand = if !b.is_finite() || (a - b).abs() >= step {
                a.min(b) + step
            } else {
                let d = a - b;
                0.5 * (a + b + (2.0 * step * step - d * d).sqrt())
            };
            if cand < t[k] {
                t[k] = cand;
                heap.push(Item { t: cand, idx: k });
            }
        };
        if i > 0 {
            relax(i - 1, j);
        }
        if i + 1 < width {
            relax(i + 1, j);
        }
        if j > 0 {
            relax(i, j - 1);
        }
        if j + 1 < height {
            relax(i, j + 1);
        }
    }
    t
}

/// Fast-Marching time-to-goal field over `grid`.
pub fn solve_time_field(grid: &OccupancyGrid, goal: [f64; 2], model: SpeedModel) -> Result<TimeField> {
    model.validate()?;
    if !(goal[0].is_finite() && goal[1].is_finite()) {
        return Err(Error::NonFinite("goal"));
    }
    let goal_cell = grid
        .world_to_cell(goal[0], goal[1])
        .ok_or_else(|| Error::Infeasible("goal outside the map".into()))?;
    if grid.get(goal_cell.0, goal_cell.1) {
        return Err(Error::Infeasible("goal cell is occupied".into()));
    }
    let speed = speed_field(grid, model);
    let values = fast_march(grid.width(), grid.height(), grid.resolution(), &speed, goal_cell);
    Ok(TimeField::from_values(grid, values, goal, goal_cell))
}

impl TimeField {
    fn from_values(grid: &OccupancyGrid, values: Vec<f64>, goal: [f64; 2], goal_cell: (usize, usize)) -> Self {
        let (w, h) = (grid.width(), grid.height());
        let res = grid.resolution();
        let mut grad = vec![[f64::NAN, f64::NAN]; w * h];
        for j in 0..h {
            for i in 0..w {
                let k = j * w + i;
                if !values[k].is_finite() {
                    continue;
                }
                let at = |ii: i64, jj: i64| -> Option<f64> {
                    if ii < 0 || jj < 0 || ii as usize >= w || jj as usize >= h {
                        return None;
                    }
                    let v = values[jj as usize * w + ii as usize];
                    v.is_finite().then_some(v)
                };
                let diff = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
                    (Some(l), Some(u)) => (u - l) / (2.0 * res),
                    (Some(l), None) => (values[k] - l) / res,
                    (None, Some(u)) => (u - values[k]) / res,
                    (None, None) => 0.0,
                };
                let (ii, jj) = (i as i64, j as i64);
                grad[k] = [diff(at(ii - 1, jj), at(ii + 1, jj)), diff(at(ii, jj - 1), at(ii, jj + 1))];
            }
        }
        TimeField { width: w, height: h, resolution: res, origin: grid.origin(), values, grad, goal, goal_cell }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    pub fn goal_cell(&self) -> (usize, usize) {
        self.goal_cell
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn cell_gradient(&self, i: usize, j: usize) -> [f64; 2] {
        self.grad[j * self.width + i]
    }

    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin[0]) / self.resolution).floor();
        let j = ((y - self.origin[1]) / self.resolution).floor();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.width && (j as usize) < self.height)
            .then(|| (i as usize, j as usize))
    }

    // Bilinear weights over the four surrounding cell centres.
    fn corners(&self, x: f64, y: f64) -> [((usize, usize), f64); 4] {
        let fx = (x - self.origin[0]) / self.resolution - 0.5;
        let fy = (y - self.origin[1]) / self.resolution - 0.5;
        let i0 = fx.floor();
        let j0 = fy.floor();
        let (tx, ty) = (fx - i0, fy - j0);
        let clamp_i = |v: f64| v.clamp(0.0, (self.width - 1) as f64) as usize;
        let clamp_j = |v: f64| v.clamp(0.0, (self.height - 1) as f64) as usize;
        [
            ((clamp_i(i0), clamp_j(j0)), (1.0 - tx) * (1.0 - ty)),
            ((clamp_i(i0 + 1.0), clamp_j(j0)), tx * (1.0 - ty)),
            ((clamp_i(i0), clamp_j(j0 + 1.0)), (1.0 - tx) * ty),
            ((clamp_i(i0 + 1.0), clamp_j(j0 + 1.0)), tx * ty),
        ]
    }

    /// Interpolated time to goal; `+inf` inside occupied or unreachable cells.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let Some((ci, cj)) = self.cell_of(x, y) else {
            return f64::INFINITY;
        };
        let own = self.cell_value(ci, cj);
        if !own.is_finite() {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for ((i, j), w) in self.corners(x, y) {
            let v = self.cell_value(i, j);
            if v.is_finite() && w > 0.0 {
                acc += w * v;
                wsum += w;
            }
        }
        if wsum > 0.0 {
            acc / wsum
        } else {
            own
        }
    }

    /// Interpolated gradient of `T`; zero where undefined.
    pub fn gradient_at(&self, x: f64, y: f64) -> [f64; 2] {
        let Some((ci, cj)) = self.cell_of(x, y) else {
            return [0.0, 0.0];
        };
        let mut acc = [0.0, 0.0];
        let mut wsum = 0.0;
        for ((i, j), w) in self.corners(x, y) {
            let g = self.cell_gradient(i, j);
            if g[0].is_finite() && w > 0.0 {
                acc[0] += w * g[0];
                acc[1] += w * g[1];
                wsum += w;
            }
        }
        if wsum > 0.0 {
            [acc[0] / wsum, acc[1] / wsum]
        } else {
            let g = self.cell_gradient(ci, cj);
            if g[0].is_finite() {
                g
            } else {
                [0.0, 0.0]
            }
        }
    }

    /// Steepest-descent cell path from `start` to the goal (8-neighbour).
    pub fn descent_path(&self, start: [f64; 2]) -> Option<Vec<[f64; 2]>> {
        let (mut i, mut j) = self.cell_of(start[0], start[1])?;
        if !self.cell_value(i, j).is_finite() {
            return None;
        }
        let center = |i: usize, j: usize| {
            [
                self.origin[0] + (i as f64 + 0.5) * self.resolution,
                self.origin[1] + (j as f64 + 0.5) * self.resolution,
            ]
        };
        let mut path = vec![start];
        let limit = self.width * self.height;
        for _ in 0..limit {
            if (i, j) == self.goal_cell {
                break;
            }
            let cur = self.cell_value(i, j);
            let mut best = (i, j, cur);
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if (di == 0 && dj == 0) || ni < 0 || nj < 0 || ni as usize >= self.width || nj as usize >= self.height {
                        continue;
                    }
                    let v = self.cell_value(ni as usize, nj as usize);
                    if v < best.2 {
                        best = (ni as usize, nj as usize, v);
                    }
                }
            }
            if (best.0, best.1) == (i, j) {
                return None;
            }
            i = best.0;
            j = best.1;
            path.push(center(i, j));
        }
        path.push(self.goal);
        Some(path)
    }

    pub fn header(&self) -> FieldHeader {
        FieldHeader {
            raster: RasterHeader {
                label: Some("time_to_goal_s".into()),
                ..RasterHeader::new(self.width, self.height, self.resolution, self.origin)
            },
            goal: self.goal,
            goal_cell: [self.goal_cell.0, self.goal_cell.1],
        }
    }

    /// Float32 raster bytes; unreachable cells are `+inf`.
    pub fn to_f32_bytes(&self) -> Vec<u8> {
        crate::io::f32_bytes(&self.values)
    }

    /// Writes `<path>` (float32) and `<path>.json` (header).
    pub fn export(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_f32_bytes())?;
        let mut hp = path.as_os_str().to_owned();
        hp.push(".json");
        crate::io::write_atomic(std::path::Path::new(&hp), &serde_json::to_vec_pretty(&self.header())?)?;
        Ok(())
    }
}

/// JSON header of an exported time field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    #[serde(flatten)]
    pub raster: RasterHeader,
    pub goal: [f64; 2],
    pub goal_cell: [usize; 2],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_cell_is_zero_and_occupied_goal_rejected() {
        let mut g = OccupancyGrid::new(30, 30, 0.1, [0.0, 0.0]).unwrap();
        let f = solve_time_field(&g, [1.55, 1.55], SpeedModel::Uniform { v_max: 1.0 }).unwrap();
        assert_eq!(f.cell_value(15, 15), 0.0);
        assert!(f.values().iter().all(|v| *v >= 0.0));
        g.set(15, 15, true);
        assert!(matches!(
            solve_time_field(&g, [1.55, 1.55], SpeedModel::Uniform { v_max: 1.0 }),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn axis_line_is_exact_in_free_space() {
        let g = OccupancyGrid::new(50, 5, 0.1, [0.0, 0.0]).unwrap();
        let f = solve_time_field(&g, [0.05, 0.25], SpeedModel::Uniform { v_max: 2.0 }).unwrap();
        for i in 0..50 {
            assert!((f.cell_value(i, 2) - i as f64 * 0.1 / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn walls_are_unreachable_and_block() {
        let mut g = OccupancyGrid::new(20, 20, 0.1, [0.0, 0.0]).unwrap();
        for j in 0..20 {
            g.set(10, j, true);
        }
        let f = solve_time_field(&g, [0.5, 0.5], SpeedModel::Uniform { v_max: 1.0 }).unwrap();
        assert!(f.cell_value(10, 3).is_infinite());
        assert!(f.cell_value(15, 3).is_infinite());
        assert!(f.value_at(1.55, 0.5).is_infinite());
        assert!(f.descent_path([1.55, 0.5]).is_none());
    }

    #[test]
    fn descent_path_reaches_goal() {
        let g = OccupancyGrid::room(4.0, 3.0, 0.1).unwrap();
        let f = solve_time_field(&g, [3.0, 2.0], SpeedModel::wall_slowdown(1.0)).unwrap();
        let p = f.descent_path([0.8, 0.7]).unwrap();
        assert_eq!(*p.last().unwrap(), [3.0, 2.0]);
        let grad = f.gradient_at(1.0, 1.0);
        // descent points roughly towards the goal
        assert!(-grad[0] > 0.0 && -grad[1] > 0.0);
    }
}
