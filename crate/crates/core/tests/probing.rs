mod common;

use navlab::estimator::{layout, EstimatorConfig};
use navlab::geometry::wrap_angle;
use navlab::planner::*;
use navlab::probing::*;
use navlab::world::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[test]
fn exact_affine_latents_give_exact_horizon_one() {
    let ds = common::arc_dataset(3);
    let cfg = ProbeConfig { horizon: 1, lambda: 0.0, ..ProbeConfig::default() };
    let m = train_probe(&ds, &cfg).unwrap();
    let r = evaluate_probe(&m, &ds, Split::Val).unwrap();
    assert_eq!(r.pos_err.len(), 1);
    assert!(r.pos_err[0] <= 1e-6, "{}", r.pos_err[0]);
    assert!(r.ang_err[0] <= 1e-6);
}

#[test]
fn perfect_latents_give_zero_error_at_every_horizon() {
    // the latent stores the next three poses verbatim
    let h = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let episodes = (0..12)
        .map(|k| {
            let poses: Vec<[f64; 3]> =
                (0..40).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0)]).collect();
            let split = if k < 10 { Split::Train } else { Split::Val };
            let mut e = common::episode(k, split, poses.clone(), |_| Vec::new());
            for (t, s) in e.steps.iter_mut().enumerate() {
                s.h = (1..=h).flat_map(|i| {
                    let p = poses[(t + i).min(poses.len() - 1)];
                    [p[0], p[1], p[2].cos(), p[2].sin()]
                }).collect();
            }
            e
        })
        .collect();
    let ds = LatentDataset { dim: 4 * h, split: SplitSpec::default(), episodes };
    let m = train_probe(&ds, &ProbeConfig { horizon: h, lambda: 0.0, ..ProbeConfig::default() }).unwrap();
    let r = evaluate_probe(&m, &ds, Split::Val).unwrap();
    assert_eq!(r.pos_err.len(), h);
    assert!(r.pos_err.iter().all(|e| *e <= 1e-6), "{:?}", r.pos_err);
}

#[test]
fn constant_trajectory_predicts_the_constant() {
    let p = [0.7, -0.2, 0.4];
    let ds = LatentDataset {
        dim: 2,
        split: SplitSpec::default(),
        episodes: vec![common::episode(0, Split::Train, vec![p; 10], |_| vec![1.0, 2.0])],
    };
    let m = train_probe(&ds, &ProbeConfig { horizon: 1, ..ProbeConfig::default() }).unwrap();
    let out = m.predict(&[1.0, 2.0], &[24], [1.0, 0.0]).unwrap();
    assert!((out[0][0] - p[0]).abs() < 1e-9 && (out[0][1] - p[1]).abs() < 1e-9 && (out[0][2] - p[2]).abs() < 1e-9);
}

#[test]
fn rollout_at_horizon_zero_is_the_readout() {
    let ds = common::arc_dataset(4);
    let cfg = ProbeConfig { variant: ProbeVariant::LatentRollout, horizon: 2, steps: 50, ..ProbeConfig::default() };
    let m = train_probe(&ds, &cfg).unwrap();
    let h = &ds.episodes[0].steps[0].h;
    let r0 = m.rollout(h, 0).unwrap();
    assert_eq!(r0.len(), 1);
    assert_eq!(r0[0], m.rollout(h, 2).unwrap()[0]);
    assert_eq!(m.predict(h, &[], [0.0, 0.0]).unwrap().len(), 2);
}

#[test]
fn short_episodes_are_rejected() {
    let ds = LatentDataset {
        dim: 1,
        split: SplitSpec::default(),
        episodes: vec![common::episode(0, Split::Train, vec![[0.0; 3]; 3], |_| vec![0.0])],
    };
    assert!(train_probe(&ds, &ProbeConfig { horizon: 5, ..ProbeConfig::default() }).is_err());
    assert!(train_probe(&ds, &ProbeConfig { horizon: 0, ..ProbeConfig::default() }).is_err());
}

fn expert_dataset(world: &WorldConfig, seed: u64) -> LatentDataset {
    let tasks = TaskSet::generate_desk(3, 3, &MapGenConfig::default(), &EpisodeGenConfig::default(), seed, "p").unwrap();
    let cache = Arc::new(FieldCache::default());
    collect_latent_logs(&tasks, world, &HarnessOpts::default(), &EstimatorConfig::default(), SplitSpec::default(), 4, || {
        Box::new(ExpertPolicy::new(ExpertConfig::default(), cache.clone()).unwrap())
    })
    .unwrap()
}

#[test]
fn clean_sensors_give_the_true_pose_in_the_latent() {
    let ds = expert_dataset(&WorldConfig::default(), 12);
    assert_eq!(ds.episodes.len(), 9);
    for e in &ds.episodes {
        for s in &e.steps {
            let h = &s.h[layout::POSE..layout::POSE + 4];
            assert!((h[0] - s.pose[0]).abs() <= 1e-6 && (h[1] - s.pose[1]).abs() <= 1e-6);
            assert!(wrap_angle(h[3].atan2(h[2]) - s.pose[2]).abs() <= 1e-6);
        }
    }
}

#[test]
fn latent_collection_is_reproducible() {
    let a = expert_dataset(&WorldConfig::default(), 13);
    let b = expert_dataset(&WorldConfig::default(), 13);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(a.rows(), a.episodes.iter().map(|e| e.meta.rows).sum::<usize>());
    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    assert_eq!(LatentDataset::load(dir.path()).unwrap(), a);
}

fn fd_check(m: &Mlp, x: &[f64], go: &[f64]) -> f64 {
    let loss = |m: &Mlp| m.apply(x).iter().zip(go).map(|(y, g)| y * g).sum::<f64>();
    let (_, cache) = m.forward(x);
    let mut grad = vec![0.0; m.params.len()];
    let gx = m.backward(x, &cache, go, &mut grad);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let mut probe = m.clone();
    for k in 0..m.params.len() {
        let orig = probe.params[k];
        probe.params[k] = orig + eps;
        let up = loss(&probe);
        probe.params[k] = orig - eps;
        let down = loss(&probe);
        probe.params[k] = orig;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3));
    }
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += eps;
        let up: f64 = m.apply(&xp).iter().zip(go).map(|(y, g)| y * g).sum();
        xp[i] -= 2.0 * eps;
        let down: f64 = m.apply(&xp).iter().zip(go).map(|(y, g)| y * g).sum();
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((fd - gx[i]).abs() / fd.abs().max(gx[i].abs()).max(1e-3));
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mlp_gradient_matches_finite_differences(seed in 0u64..10_000, inputs in 1usize..6, hidden in 1usize..9, outputs in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Mlp::new(inputs, hidden, outputs, false, &mut rng);
        let x: Vec<f64> = (0..inputs).map(|_| rng.random_range(-2.0..2.0)).collect();
        let go: Vec<f64> = (0..outputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e = fd_check(&m, &x, &go);
        prop_assert!(e <= 1e-4, "{}", e);
    }

    #[test]
    fn spearman_of_a_monotone_map_is_one(xs in prop::collection::vec(-10.0f64..10.0, 3..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        let r = spearman(&xs, &ys).unwrap();
        prop_assert!((r - 1.0).abs() < 1e-12 || xs.windows(2).all(|w| w[0] == w[1]));
    }
}
