//! Fast-Marching expert: time fields, action cost, greedy controller and the
//! planning-quality measure.

pub mod cost;
pub mod expert;
pub mod fmm;
pub mod quality;

pub use cost::{action_cost, CostModel, CostTerms, CostWeights};
pub use expert::{ExpertConfig, ExpertPolicy, PoseSource};
pub use fmm::{solve_time_field, SpeedModel, TimeField};
pub use quality::{planning_quality, quality_heatmap, quality_samples, step_costs, Heatmap, QualitySample};

use crate::error::{Error, Result};
use crate::world::{OccupancyGrid, TrajectoryLog};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

type FieldKey = (usize, (usize, usize), [u64; 3]);

/// Shared cache of time fields keyed by map, goal cell and speed model.
/// Goals on occupied cells snap to the nearest free cell.
pub struct FieldCache {
    fields: Mutex<HashMap<FieldKey, Arc<TimeField>>>,
    // keeps cached maps alive so their addresses stay unique
    pins: Mutex<HashMap<usize, Arc<OccupancyGrid>>>,
    capacity: usize,
}

impl Default for FieldCache {
    fn default() -> Self {
        FieldCache::new(4096)
    }
}

impl FieldCache {
    pub fn new(capacity: usize) -> Self {
        FieldCache { fields: Mutex::new(HashMap::new()), pins: Mutex::new(HashMap::new()), capacity: capacity.max(1) }
    }

    pub fn len(&self) -> usize {
        self.fields.lock().expect("field cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, grid: &Arc<OccupancyGrid>, goal: [f64; 2], model: SpeedModel) -> Result<Arc<TimeField>> {
        if !(goal[0].is_finite() && goal[1].is_finite()) {
            return Err(Error::NonFinite("goal"));
        }
        let (cell, point) = match grid.world_to_cell(goal[0], goal[1]) {
            Some((i, j)) if !grid.get(i, j) => ((i, j), goal),
            _ => {
                let c = grid
                    .nearest_free_cell(goal[0], goal[1])
                    .ok_or_else(|| Error::Infeasible("map has no free cell".into()))?;
                (c, grid.cell_center(c.0, c.1))
            }
        };
        let bits = match model {
            SpeedModel::Uniform { v_max } => [v_max.to_bits(), 0, 0],
            SpeedModel::WallSlowdown { v_max, k, clearance } => [v_max.to_bits(), k.to_bits(), clearance.to_bits()],
        };
        let ptr = Arc::as_ptr(grid) as usize;
        let key = (ptr, cell, bits);
        if let Some(f) = self.fields.lock().expect("field cache poisoned").get(&key) {
            return Ok(f.clone());
        }
        let field = Arc::new(solve_time_field(grid, point, model)?);
        let mut fields = self.fields.lock().expect("field cache poisoned");
        let mut pins = self.pins.lock().expect("field cache poisoned");
        if fields.len() >= self.capacity {
            fields.clear();
            pins.clear();
        }
        pins.entry(ptr).or_insert_with(|| grid.clone());
        Ok(fields.entry(key).or_insert(field).clone())
    }
}

/// `M(t)` of a logged episode under the expert's own cost model.
pub fn log_quality(
    log: &TrajectoryLog,
    grid: &Arc<OccupancyGrid>,
    cache: &FieldCache,
    cfg: &ExpertConfig,
) -> Result<Vec<f64>> {
    let field = cache.get(grid, log.header.episode.goal_world(), cfg.speed_model())?;
    let model = CostModel {
        field: &field,
        grid,
        weights: &cfg.weights,
        dynamics: &cfg.dynamics,
        mode: cfg.mode,
        robot_radius: cfg.robot_radius,
    };
    planning_quality(log, &model)
}
