mod common;

use navlab::planner::*;
use navlab::policy::Policy;
use navlab::shapley::*;
use navlab::world::*;
use proptest::prelude::*;
use std::sync::Arc;

/// Glove game plus one player that never matters.
struct Glove;

impl CoalitionGame for Glove {
    fn players(&self) -> usize {
        4
    }
    fn value(&self, c: &[bool]) -> navlab::Result<f64> {
        // players 0 and 1 are interchangeable left gloves, 2 is the right glove
        Ok(if (c[0] || c[1]) && c[2] { 1.0 } else { 0.0 })
    }
}

#[test]
fn glove_game_matches_the_exact_values() {
    let est = shapley_permutations(&Glove, 4000, 9).unwrap();
    let exact = [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 0.0];
    for ((p, s), e) in est.phi.iter().zip(&est.se).zip(exact) {
        assert!((p - e).abs() <= 4.0 * s + 1e-12, "{p} vs {e}");
    }
    assert_eq!(est.phi[3], 0.0);
    assert_eq!(est.se[3], 0.0);
    assert!((est.phi[0] - est.phi[1]).abs() <= 4.0 * est.diff_se(0, 1) + 1e-12);
    let total: f64 = est.phi.iter().sum();
    assert!((total - (est.v_all - est.v_empty)).abs() < 1e-12);
}

#[test]
fn zero_permutations_are_rejected() {
    assert!(shapley_permutations(&Glove, 0, 1).is_err());
}

fn empty_maps(n: usize, eps: usize, seed: u64, prefix: &str) -> TaskSet {
    let mc = MapGenConfig { n_boxes: 0, wall_probability: 0.0, width_m: 6.0, height_m: 6.0, ..MapGenConfig::default() };
    TaskSet::generate_desk(n, eps, &mc, &EpisodeGenConfig::default(), seed, prefix).unwrap()
}

#[test]
fn navigation_game_axioms_with_duplicated_pose_players() {
    let tasks = empty_maps(2, 6, 41, "eval");
    let world = WorldConfig::default();
    let cache = Arc::new(FieldCache::default());
    let mk = || -> Box<dyn Policy> { Box::new(common::TwinPose::new(cache.clone())) };
    let bg_logs = run_task_set(&empty_maps(2, 3, 42, "bg"), &world, &HarnessOpts::default(), None, false, 9, mk).unwrap();
    let bank = ObservationBank::from_logs(&bg_logs);
    for s in &bank.observations {
        assert_eq!(s.odom_pose, s.loc_pose);
    }
    let r = shapley_importance(&tasks, &world, &HarnessOpts::default(), &bank, &Player::ALL, ValueMetric::Sr, 30, 5, mk).unwrap();
    let total: f64 = r.players.iter().map(|p| p.phi).sum();
    let se_total = r.players.iter().map(|p| p.se * p.se).sum::<f64>().sqrt();
    assert!((total - (r.v_all - r.v_empty)).abs() <= 3.0 * se_total + 1e-12);
    for dummy in [Player::Scan, Player::PrevAction] {
        let p = r.phi(dummy).unwrap();
        assert!(p.phi.abs() <= 2.0 * p.se + 1e-12, "{dummy:?} {}", p.phi);
    }
    let (a, b) = (r.phi(Player::Odometry).unwrap(), r.phi(Player::Localization).unwrap());
    let se = r.diff_se(Player::Odometry, Player::Localization).unwrap();
    assert!((a.phi - b.phi).abs() <= 2.0 * se + 1e-12, "{} vs {}", a.phi, b.phi);
    assert!(r.v_all > r.v_empty);
}

#[test]
fn background_must_not_share_maps() {
    let tasks = empty_maps(1, 2, 41, "eval");
    let world = WorldConfig::default();
    let cache = Arc::new(FieldCache::default());
    let mk = || -> Box<dyn Policy> { Box::new(ExpertPolicy::new(ExpertConfig::default(), cache.clone()).unwrap()) };
    let bank = ObservationBank::from_logs(&run_task_set(&tasks, &world, &HarnessOpts::default(), None, false, 1, mk).unwrap());
    let err = shapley_importance(&tasks, &world, &HarnessOpts::default(), &bank, &Player::ALL, ValueMetric::Sr, 2, 1, mk);
    assert!(err.is_err());
    let empty = ObservationBank { map_ids: Default::default(), observations: Vec::new() };
    assert!(shapley_importance(&tasks, &world, &HarnessOpts::default(), &empty, &Player::ALL, ValueMetric::Sr, 2, 1, mk).is_err());
}

#[test]
fn report_csv_has_one_row_per_player() {
    let r = ShapleyReport {
        metric: ValueMetric::Spl,
        permutations: 3,
        episodes: 4,
        v_all: 1.0,
        v_empty: 0.0,
        players: vec![PlayerValue { player: Player::Goal, phi: 1.0, se: 0.0 }],
        contributions: Vec::new(),
    };
    let text = String::from_utf8(r.to_csv().unwrap()).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("goal,1,0,3,spl"));
}

/// Weighted voting game with quota.
struct Vote(Vec<f64>, f64);

impl CoalitionGame for Vote {
    fn players(&self) -> usize {
        self.0.len()
    }
    fn value(&self, c: &[bool]) -> navlab::Result<f64> {
        let w: f64 = self.0.iter().zip(c).filter(|(_, &b)| b).map(|(w, _)| w).sum();
        Ok(if w >= self.1 { 1.0 } else { 0.0 })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn efficiency_holds_for_every_sample(ws in prop::collection::vec(0.0f64..3.0, 1..7), q in 0.5f64..6.0, seed in 0u64..1000) {
        let est = shapley_permutations(&Vote(ws, q), 17, seed).unwrap();
        let total: f64 = est.phi.iter().sum();
        prop_assert!((total - (est.v_all - est.v_empty)).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_players_are_dummies(ws in prop::collection::vec(0.1f64..3.0, 1..6), q in 0.5f64..6.0, seed in 0u64..1000) {
        let mut ws = ws;
        ws.push(0.0);
        let est = shapley_permutations(&Vote(ws.clone(), q), 25, seed).unwrap();
        prop_assert_eq!(est.phi[ws.len() - 1], 0.0);
    }
}
