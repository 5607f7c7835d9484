#![allow(dead_code)]

use navlab::dynamics::Command;
use navlab::geometry::{wrap_angle, Pose};
use navlab::planner::{ExpertConfig, ExpertPolicy, FieldCache, PoseSource};
use navlab::policy::{EpisodeContext, Policy, PolicyInput};
use navlab::probing::dataset::EpisodeMeta;
use navlab::probing::{LatentDataset, LatentEpisode, LatentStep, Split, SplitSpec};
use navlab::world::OccupancyGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

#[derive(PartialEq)]
struct Node(f64, usize);

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0)
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// 8-connected Dijkstra over cell-traversal times; diagonals may not cut
/// occupied corners.
pub fn dijkstra8(width: usize, height: usize, h: f64, speed: &[f64], goal: (usize, usize)) -> Vec<f64> {
    let mut t = vec![f64::INFINITY; width * height];
    let g = goal.1 * width + goal.0;
    t[g] = 0.0;
    let mut heap = BinaryHeap::from([Node(0.0, g)]);
    while let Some(Node(d, k)) = heap.pop() {
        if d > t[k] {
            continue;
        }
        let (i, j) = ((k % width) as i64, (k / width) as i64);
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= width as i64 || nj >= height as i64 {
                continue;
            }
            let q = nj as usize * width + ni as usize;
            if speed[q] <= 0.0 {
                continue;
            }
            if di != 0 && dj != 0 {
                let a = j as usize * width + ni as usize;
                let b = nj as usize * width + i as usize;
                if speed[a] <= 0.0 || speed[b] <= 0.0 {
                    continue;
                }
            }
            let len = if di != 0 && dj != 0 { h * 2f64.sqrt() } else { h };
            let nd = d + len * 0.5 * (1.0 / speed[k] + 1.0 / speed[q]);
            if nd < t[q] {
                t[q] = nd;
                heap.push(Node(nd, q));
            }
        }
    }
    t
}

/// 100x100 grid at 0.1 m with random boxes; returns the grid and a free goal.
pub fn random_map(seed: u64) -> (OccupancyGrid, [f64; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = OccupancyGrid::new(100, 100, 0.1, [0.0, 0.0]).unwrap();
    for _ in 0..rng.random_range(8..20) {
        let (w, h) = (rng.random_range(2..20), rng.random_range(2..20));
        let (i0, j0) = (rng.random_range(0..100 - w), rng.random_range(0..100 - h));
        for j in j0..j0 + h {
            for i in i0..i0 + w {
                g.set(i, j, true);
            }
        }
    }
    loop {
        let (i, j) = (rng.random_range(0..100), rng.random_range(0..100));
        if !g.get(i, j) {
            let c = g.cell_center(i, j);
            return (g, c);
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of a Bernoulli proportion.
pub fn prop_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Expert that averages the odometry and localization poses and reads its
/// velocities from the ground truth, so the two pose modalities enter
/// symmetrically.
pub struct TwinPose(pub ExpertPolicy);

impl TwinPose {
    pub fn new(cache: Arc<FieldCache>) -> Self {
        let cfg = ExpertConfig { pose_source: PoseSource::Average, ..ExpertConfig::default() };
        TwinPose(ExpertPolicy::new(cfg, cache).unwrap())
    }
}

impl Policy for TwinPose {
    fn name(&self) -> String {
        "twin-pose".into()
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> navlab::error::Result<()> {
        self.0.begin_episode(ctx)
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> navlab::error::Result<Command> {
        let mut obs = input.obs.clone();
        obs.odom_vel = [input.truth.v, input.truth.omega];
        self.0.act(&PolicyInput { obs: &obs, truth: input.truth, time: input.time, estimate: input.estimate })
    }

    fn on_frame_reset(&mut self, estimate: Pose) {
        self.0.on_frame_reset(estimate)
    }
}

pub fn episode(id: usize, split: Split, poses: Vec<[f64; 3]>, latent: impl Fn(&[f64; 3]) -> Vec<f64>) -> LatentEpisode {
    let steps: Vec<LatentStep> = poses
        .iter()
        .enumerate()
        .map(|(t, p)| LatentStep { t, pose: *p, onboard: *p, action: 24, h: latent(p) })
        .collect();
    LatentEpisode {
        meta: EpisodeMeta {
            id: format!("e{id}"),
            map_id: "m".into(),
            split,
            start_pose: Pose::new(0.0, 0.0, 0.0),
            goal: [1.0, 0.0],
            rows: steps.len(),
        },
        steps,
    }
}

/// Unicycle arcs at one shared (v, omega); the next pose is affine in
/// `(x, y, cos, sin)` of the current one.
pub fn arc_dataset(seed: u64) -> LatentDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (v, w, dt): (f64, f64, f64) = (0.3, 0.2, 1.0 / 3.0);
    let episodes = (0..20)
        .map(|k| {
            let mut p: [f64; 3] = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.1..3.1)];
            let mut poses = Vec::new();
            for _ in 0..30 {
                poses.push(p);
                let th = p[2] + w * dt;
                p = [p[0] + v / w * (th.sin() - p[2].sin()), p[1] - v / w * (th.cos() - p[2].cos()), wrap_angle(th)];
            }
            let split = if k < 16 { Split::Train } else { Split::Val };
            episode(k, split, poses, |p| vec![p[0], p[1], p[2].cos(), p[2].sin()])
        })
        .collect();
    LatentDataset { dim: 4, split: SplitSpec::default(), episodes }
}

