mod common;

use navlab::dynamics::DynParams;
use navlab::planner::fmm::{fast_march, speed_field, FieldHeader};
use navlab::planner::*;
use navlab::world::*;
use proptest::prelude::*;
use std::sync::Arc;

const UNIFORM: SpeedModel = SpeedModel::Uniform { v_max: 1.0 };

#[test]
fn goal_time_is_zero_and_times_are_lower_bounded() {
    for seed in 0..5 {
        let (g, goal) = common::random_map(seed);
        let f = solve_time_field(&g, goal, SpeedModel::Uniform { v_max: 2.0 }).unwrap();
        let (gi, gj) = f.goal_cell();
        assert_eq!(f.cell_value(gi, gj), 0.0);
        for j in 0..100 {
            for i in 0..100 {
                let c = g.cell_center(i, j);
                let euclid = (c[0] - goal[0]).hypot(c[1] - goal[1]) / 2.0;
                assert!(f.cell_value(i, j) >= euclid - 1e-9);
            }
        }
    }
}

#[test]
fn empty_map_matches_euclidean_time() {
    let g = OccupancyGrid::new(100, 100, 0.1, [0.0, 0.0]).unwrap();
    let goal = [5.05, 5.05];
    let f = solve_time_field(&g, goal, UNIFORM).unwrap();
    let mut worst = 0.0f64;
    for j in 0..100 {
        for i in 0..100 {
            let c = g.cell_center(i, j);
            let d = (c[0] - goal[0]).hypot(c[1] - goal[1]);
            if (i, j) != f.goal_cell() {
                worst = worst.max((f.cell_value(i, j) - d).abs() / d);
            }
        }
    }
    assert!(worst <= 0.02, "{worst}");
}

#[test]
fn agrees_with_dijkstra_on_random_maps() {
    for seed in 0..20 {
        let (g, goal) = common::random_map(seed);
        let f = solve_time_field(&g, goal, UNIFORM).unwrap();
        let d = common::dijkstra8(100, 100, 0.1, &speed_field(&g, UNIFORM), f.goal_cell());
        let mut rel = Vec::new();
        for (a, b) in f.values().iter().zip(&d) {
            assert_eq!(a.is_finite(), b.is_finite());
            if b.is_finite() && *b > 0.0 {
                rel.push((a - b).abs() / b);
            }
        }
        assert!(common::mean(&rel) <= 0.05, "seed {seed}: {}", common::mean(&rel));
    }
}

#[test]
fn wall_slowdown_is_never_faster_than_uniform() {
    let (g, goal) = common::random_map(3);
    let a = solve_time_field(&g, goal, UNIFORM).unwrap();
    let b = solve_time_field(&g, goal, SpeedModel::wall_slowdown(1.0)).unwrap();
    for (u, s) in a.values().iter().zip(b.values()) {
        assert!(s >= u || (u.is_infinite() && s.is_infinite()));
    }
}

#[test]
fn field_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let g = OccupancyGrid::room(3.0, 2.0, 0.1).unwrap();
    let f = solve_time_field(&g, [1.5, 1.0], UNIFORM).unwrap();
    let path = dir.path().join("f.bin");
    f.export(&path).unwrap();
    let raw = navlab::io::f32_from_bytes(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(raw.len(), 30 * 20);
    let header: FieldHeader = serde_json::from_slice(&std::fs::read(dir.path().join("f.bin.json")).unwrap()).unwrap();
    assert_eq!((header.raster.width, header.raster.height), (30, 20));
    assert_eq!(header.goal_cell, [15, 10]);
}

fn empty_tasks(seed: u64) -> TaskSet {
    let mc = MapGenConfig { n_boxes: 0, wall_probability: 0.0, ..MapGenConfig::default() };
    TaskSet::generate_desk(3, 4, &mc, &EpisodeGenConfig::default(), seed, "empty").unwrap()
}

#[test]
fn expert_position_cost_never_increases_on_empty_maps() {
    let tasks = empty_tasks(8);
    let cache = Arc::new(FieldCache::default());
    let cfg = ExpertConfig::default();
    let logs = run_task_set(&tasks, &WorldConfig::default(), &HarnessOpts::default(), None, false, 1, || {
        Box::new(ExpertPolicy::new(cfg.clone(), cache.clone()).unwrap())
    })
    .unwrap();
    for log in &logs {
        assert!(log.success());
        let grid = tasks.map(&log.header.episode.map_id).unwrap();
        let field = cache.get(grid, log.header.episode.goal_world(), cfg.speed_model()).unwrap();
        let model = CostModel {
            field: &field,
            grid,
            weights: &cfg.weights,
            dynamics: &cfg.dynamics,
            mode: cfg.mode,
            robot_radius: cfg.robot_radius,
        };
        let costs = step_costs(log, &model).unwrap();
        for w in costs.windows(2) {
            // sub-millimetre reversals while an underdamped brake settles
            assert!(w[1].position <= w[0].position + 1e-4, "{}", log.header.episode.id);
        }
    }
}

#[test]
fn expert_solves_cluttered_desk_episodes() {
    let tasks = TaskSet::generate_desk(6, 4, &MapGenConfig::default(), &EpisodeGenConfig::default(), 77, "d").unwrap();
    let cache = Arc::new(FieldCache::default());
    let logs = run_task_set(&tasks, &WorldConfig::default(), &HarnessOpts::default(), None, false, 2, || {
        Box::new(ExpertPolicy::new(ExpertConfig::default(), cache.clone()).unwrap())
    })
    .unwrap();
    let sr = logs.iter().filter(|l| l.success()).count() as f64 / logs.len() as f64;
    assert!(sr >= 0.95, "{sr}");
    for l in &logs {
        assert!(l.end.episode_time <= 120.0);
    }
}

#[test]
fn expert_quality_series_has_one_entry_per_transition() {
    let tasks = empty_tasks(9);
    let cache = Arc::new(FieldCache::default());
    let cfg = ExpertConfig::default();
    let logs = run_task_set(&tasks, &WorldConfig::default(), &HarnessOpts::default(), None, false, 3, || {
        Box::new(ExpertPolicy::new(cfg.clone(), cache.clone()).unwrap())
    })
    .unwrap();
    let log = &logs[0];
    let m = log_quality(log, tasks.map(&log.header.episode.map_id).unwrap(), &cache, &cfg).unwrap();
    assert_eq!(m.len(), log.steps.len() - 1);
    assert!(m.iter().all(|v| v.is_finite()));
}

#[test]
fn expert_rejects_bad_weights() {
    let cfg = ExpertConfig { weights: CostWeights { w_pos: -1.0, ..CostWeights::default() }, ..ExpertConfig::default() };
    assert!(ExpertPolicy::new(cfg, Arc::new(FieldCache::default())).is_err());
    let cfg = ExpertConfig { dynamics: DynParams { v_max: 0.0, ..DynParams::default() }, ..ExpertConfig::default() };
    assert!(ExpertPolicy::new(cfg, Arc::new(FieldCache::default())).is_err());
}

#[test]
fn single_point_kde_peak_is_the_gaussian_normalisation() {
    let sigma = 0.5;
    let s = [QualitySample { x: 2.05, y: 1.05, m: 1.0 }];
    let h = quality_heatmap(&s, 60, 40, 0.1, [0.0, 0.0], sigma).unwrap();
    let peak = h.positive.iter().cloned().fold(0.0, f64::max);
    assert!((peak - 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma)).abs() <= 1e-6);
    assert_eq!(h.positive[10 * 60 + 20], peak);
    assert!(h.negative.iter().all(|v| *v == 0.0));
    let neg = quality_heatmap(&[QualitySample { m: -2.0, ..s[0] }], 60, 40, 0.1, [0.0, 0.0], sigma).unwrap();
    assert!((neg.negative[10 * 60 + 20] - 2.0 * peak).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kde_is_translation_equivariant(x in 1.0f64..2.0, y in 1.0f64..2.0, di in 0i64..15, dj in 0i64..10, m in -3.0f64..3.0) {
        let (w, h, res) = (50usize, 40usize, 0.1);
        let a = quality_heatmap(&[QualitySample { x, y, m }], w, h, res, [0.0, 0.0], 0.3).unwrap();
        let b = quality_heatmap(&[QualitySample { x: x + di as f64 * res, y: y + dj as f64 * res, m }], w, h, res, [0.0, 0.0], 0.3).unwrap();
        for j in 0..h as i64 - dj {
            for i in 0..w as i64 - di {
                let p = a.positive[(j * w as i64 + i) as usize] - b.positive[((j + dj) * w as i64 + i + di) as usize];
                let n = a.negative[(j * w as i64 + i) as usize] - b.negative[((j + dj) * w as i64 + i + di) as usize];
                prop_assert!(p.abs() <= 1e-9 && n.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn fast_march_is_symmetric_on_empty_grids(n in 5usize..40, gi in 0usize..5) {
        let speed = vec![1.0; n * n];
        let t = fast_march(n, n, 0.1, &speed, (gi, gi));
        for j in 0..n {
            for i in 0..n {
                prop_assert!((t[j * n + i] - t[i * n + j]).abs() < 1e-12);
            }
        }
    }
}
