//! Point-goal episodes, their generator and on-disk task sets.

use super::grid::{MapGenConfig, OccupancyGrid};
use crate::error::{Error, Result};
use crate::geometry::{polar_to_cartesian, Pose};
use crate::planner::fmm::fast_march;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

fn default_success_radius() -> f64 {
    0.2
}

fn default_time_limit() -> f64 {
    120.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub map_id: String,
    pub start_pose: Pose,
    /// Goal `(rho, phi)` relative to the start frame.
    pub goal_polar: [f64; 2],
    #[serde(default = "default_success_radius")]
    pub success_radius: f64,
    #[serde(default = "default_time_limit")]
    pub time_limit: f64,
}

impl Episode {
    pub fn goal_world(&self) -> [f64; 2] {
        self.start_pose.transform_point(polar_to_cartesian(self.goal_polar[0], self.goal_polar[1]))
    }

    /// Builds an episode from world start pose and world goal.
    pub fn from_world(id: impl Into<String>, map_id: impl Into<String>, start: Pose, goal: [f64; 2]) -> Self {
        let local = start.inverse_transform_point(goal);
        Episode {
            id: id.into(),
            map_id: map_id.into(),
            start_pose: start,
            goal_polar: [local[0].hypot(local[1]), local[1].atan2(local[0])],
            success_radius: default_success_radius(),
            time_limit: default_time_limit(),
        }
    }

    pub fn validate(&self, grid: &OccupancyGrid) -> Result<()> {
        if !(self.success_radius > 0.0) || !(self.time_limit > 0.0) {
            return Err(Error::InvalidParams("success radius and time limit must be > 0".into()));
        }
        if grid.occupied_at(self.start_pose.x, self.start_pose.y) {
            return Err(Error::Infeasible(format!("episode {}: start cell occupied", self.id)));
        }
        let g = self.goal_world();
        if grid.occupied_at(g[0], g[1]) {
            return Err(Error::Infeasible(format!("episode {}: goal cell occupied", self.id)));
        }
        Ok(())
    }
}

/// Parameters of the solvable-episode generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeGenConfig {
    pub robot_radius: f64,
    pub min_geodesic_m: f64,
    pub max_geodesic_m: f64,
    pub success_radius: f64,
    pub time_limit: f64,
    pub max_attempts: usize,
}

impl Default for EpisodeGenConfig {
    fn default() -> Self {
        EpisodeGenConfig {
            robot_radius: 0.3,
            min_geodesic_m: 1.5,
            max_geodesic_m: 7.0,
            success_radius: 0.2,
            time_limit: 120.0,
            max_attempts: 2000,
        }
    }
}

/// Cells whose centre keeps a disc of `radius` clear of obstacles, with a
/// margin for the square-cell discretisation.
pub fn configuration_free(grid: &OccupancyGrid, radius: f64) -> Vec<bool> {
    let margin = 0.75 * grid.resolution();
    grid.clearance().iter().map(|d| *d >= radius + margin).collect()
}

/// Samples `n` episodes whose start and goal fit the robot footprint and
/// are connected through configuration space (checked by Fast Marching).
pub fn generate_episodes<R: Rng + ?Sized>(
    grid: &OccupancyGrid,
    map_id: &str,
    n: usize,
    cfg: &EpisodeGenConfig,
    rng: &mut R,
) -> Result<Vec<Episode>> {
    let free = configuration_free(grid, cfg.robot_radius);
    let candidates: Vec<usize> = (0..grid.len()).filter(|&k| free[k]).collect();
    if candidates.len() < 2 {
        return Err(Error::Infeasible(format!("map {map_id} has no room for the robot")));
    }
    let speed: Vec<f64> = free.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > cfg.max_attempts * n.max(1) {
            return Err(Error::Infeasible(format!("could not sample {n} solvable episodes on {map_id}")));
        }
        let g_idx = candidates[rng.random_range(0..candidates.len())];
        let s_idx = candidates[rng.random_range(0..candidates.len())];
        let (gi, gj) = grid.cell_of_index(g_idx);
        let (si, sj) = grid.cell_of_index(s_idx);
        let t = fast_march(grid.width(), grid.height(), grid.resolution(), &speed, (gi, gj));
        let geo = t[s_idx];
        if !geo.is_finite() || geo < cfg.min_geodesic_m || geo > cfg.max_geodesic_m {
            continue;
        }
        let s = grid.cell_center(si, sj);
        let g = grid.cell_center(gi, gj);
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut ep = Episode::from_world(format!("{map_id}/{:03}", out.len()), map_id, Pose::new(s[0], s[1], theta), g);
        ep.success_radius = cfg.success_radius;
        ep.time_limit = cfg.time_limit;
        out.push(ep);
    }
    Ok(out)
}

/// Maps plus the episodes defined on them.
#[derive(Clone, Debug, Default)]
pub struct TaskSet {
    pub maps: BTreeMap<String, Arc<OccupancyGrid>>,
    pub episodes: Vec<Episode>,
}

impl TaskSet {
    /// `n_maps` random desk maps with `per_map` solvable episodes each.
    pub fn generate_desk(
        n_maps: usize,
        per_map: usize,
        map_cfg: &MapGenConfig,
        ep_cfg: &EpisodeGenConfig,
        seed: u64,
        prefix: &str,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = TaskSet::default();
        for m in 0..n_maps {
            let id = format!("{prefix}-{m:03}");
            // regenerate maps too cluttered to host the requested episodes
            let mut tries = 0;
            loop {
                tries += 1;
                let grid = map_cfg.generate(&mut rng)?;
                match generate_episodes(&grid, &id, per_map, ep_cfg, &mut rng) {
                    Ok(eps) => {
                        set.maps.insert(id.clone(), Arc::new(grid));
                        set.episodes.extend(eps);
                        break;
                    }
                    Err(e) if tries >= 20 => return Err(e),
                    Err(_) => continue,
                }
            }
        }
        Ok(set)
    }

    pub fn map(&self, id: &str) -> Result<&Arc<OccupancyGrid>> {
        self.maps.get(id).ok_or_else(|| Error::Parse(format!("unknown map id {id}")))
    }

    /// Writes `maps/<id>.grid|json` and `episodes.jsonl` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("maps"))?;
        for (id, g) in &self.maps {
            g.save(&dir.join("maps").join(format!("{id}.grid")))?;
        }
        crate::io::write_atomic(&dir.join("episodes.jsonl"), &crate::io::to_jsonl(&self.episodes)?)?;
        Ok(())
    }

    /// Loads episodes from a JSON-lines file and maps from `map_dir`.
    pub fn load(episodes: &Path, map_dir: &Path) -> Result<Self> {
        let eps: Vec<Episode> = crate::io::read_jsonl(episodes)?;
        let mut maps = BTreeMap::new();
        for e in &eps {
            if maps.contains_key(&e.map_id) {
                continue;
            }
            let grid_path = map_dir.join(format!("{}.grid", e.map_id));
            let path = if grid_path.exists() { grid_path } else { map_dir.join(format!("{}.pgm", e.map_id)) };
            let g = OccupancyGrid::load(&path)?;
            e.validate(&g)?;
            maps.insert(e.map_id.clone(), Arc::new(g));
        }
        for e in &eps {
            e.validate(&maps[&e.map_id])?;
        }
        Ok(TaskSet { maps, episodes: eps })
    }

    /// Loads a directory written by [`TaskSet::save`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join("episodes.jsonl"), &dir.join("maps"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn goal_polar_round_trip() {
        let start = Pose::new(1.0, 2.0, 0.5);
        let e = Episode::from_world("e", "m", start, [3.0, 1.0]);
        let g = e.goal_world();
        assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generated_episodes_are_solvable() {
        let set = TaskSet::generate_desk(3, 5, &MapGenConfig::default(), &EpisodeGenConfig::default(), 7, "t")
            .unwrap();
        assert_eq!(set.episodes.len(), 15);
        for e in &set.episodes {
            let g = set.map(&e.map_id).unwrap();
            e.validate(g).unwrap();
            assert!(!g.disc_collides(e.start_pose.x, e.start_pose.y, 0.25));
        }
    }

    #[test]
    fn task_set_save_load() {
        let set = TaskSet::generate_desk(1, 3, &MapGenConfig::default(), &EpisodeGenConfig::default(), 1, "s")
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path()).unwrap();
        let back = TaskSet::load_dir(dir.path()).unwrap();
        assert_eq!(back.episodes, set.episodes);
        assert_eq!(*back.maps["s-000"], *set.maps["s-000"]);
    }
}
