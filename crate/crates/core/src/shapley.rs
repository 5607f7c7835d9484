//! Monte-Carlo Shapley attribution of navigation performance to observation
//! modalities.
//!
//! A modality outside the coalition is replaced at every step by the same
//! field of an observation drawn uniformly from a background bank. One draw
//! is made per step whatever the coalition, so coalitions share their random
//! streams and a modality the policy never reads gets exactly zero credit.

use crate::error::{Error, Result};
use crate::metrics::{results_from_logs, spl, success_rate};
use crate::policy::Policy;
use crate::world::{
    derive_seed, run_episode, HarnessOpts, Observation, ObservationTransform, RunOptions, TaskSet, TrajectoryLog, WorldConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Player {
    /// Odometry pose and velocities.
    Odometry,
    Localization,
    Scan,
    Goal,
    PrevAction,
}

impl Player {
    pub const ALL: [Player; 5] = [Player::Odometry, Player::Localization, Player::Scan, Player::Goal, Player::PrevAction];

    pub fn name(self) -> &'static str {
        match self {
            Player::Odometry => "odometry",
            Player::Localization => "localization",
            Player::Scan => "scan",
            Player::Goal => "goal",
            Player::PrevAction => "prev_action",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Player::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::UnknownPlayer(s.to_string()))
    }

    fn copy(self, from: &Observation, to: &mut Observation) {
        match self {
            Player::Odometry => {
                to.odom_pose = from.odom_pose;
                to.odom_vel = from.odom_vel;
            }
            Player::Localization => to.loc_pose = from.loc_pose,
            Player::Scan => to.scan.clone_from(&from.scan),
            Player::Goal => to.goal = from.goal,
            Player::PrevAction => to.prev_action = from.prev_action,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMetric {
    #[default]
    Sr,
    Spl,
}

impl ValueMetric {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(ValueMetric::Sr),
            "spl" => Ok(ValueMetric::Spl),
            _ => Err(Error::InvalidParams(format!("unknown value metric `{s}`"))),
        }
    }
}

/// A cooperative game over `players()` players.
pub trait CoalitionGame: Sync {
    fn players(&self) -> usize;
    fn value(&self, coalition: &[bool]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyEstimate {
    pub phi: Vec<f64>,
    /// Monte-Carlo standard error of each `phi`.
    pub se: Vec<f64>,
    pub permutations: usize,
    pub v_all: f64,
    pub v_empty: f64,
    /// Marginal contribution of each player in each sampled permutation.
    pub contributions: Vec<Vec<f64>>,
}

impl ShapleyEstimate {
    /// Standard error of `phi[i] - phi[j]`, paired over permutations.
    pub fn diff_se(&self, i: usize, j: usize) -> f64 {
        paired_se(&self.contributions[i], &self.contributions[j])
    }
}

fn paired_se(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.len() < 2 {
        return f64::INFINITY;
    }
    let m = d.len() as f64;
    let mean = pairwise_sum(&d) / m;
    let var = pairwise_sum(&d.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>()) / (m - 1.0);
    (var / m).sqrt()
}

/// Sampled-permutation Shapley values. Coalition values are memoized, so
/// each distinct coalition is evaluated once; evaluation runs in parallel.
pub fn shapley_permutations(game: &dyn CoalitionGame, n_perms: usize, seed: u64) -> Result<ShapleyEstimate> {
    let n = game.players();
    if n == 0 {
        return Err(Error::Empty("players"));
    }
    if n_perms == 0 {
        return Err(Error::InvalidParams("at least one permutation is needed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..n_perms)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let key = |c: &[bool]| c.iter().enumerate().fold(0u64, |k, (i, &b)| k | (u64::from(b) << i));
    let mut needed: BTreeSet<u64> = BTreeSet::new();
    let mut masks: Vec<Vec<bool>> = Vec::new();
    for p in &perms {
        let mut c = vec![false; n];
        for step in 0..=n {
            if step > 0 {
                c[p[step - 1]] = true;
            }
            if needed.insert(key(&c)) {
                masks.push(c.clone());
            }
        }
    }
    let values: HashMap<u64, f64> = masks
        .par_iter()
        .map(|c| Ok((key(c), game.value(c)?)))
        .collect::<Result<HashMap<_, _>>>()?;

    let mut contrib = vec![Vec::with_capacity(n_perms); n];
    for p in &perms {
        let mut c = vec![false; n];
        let mut prev = values[&key(&c)];
        for &i in p {
            c[i] = true;
            let v = values[&key(&c)];
            contrib[i].push(v - prev);
            prev = v;
        }
    }
    let m = n_perms as f64;
    let phi: Vec<f64> = contrib.iter().map(|c| pairwise_sum(c) / m).collect();
    let se = contrib
        .iter()
        .zip(&phi)
        .map(|(c, mean)| {
            if n_perms < 2 {
                return f64::INFINITY;
            }
            let var = pairwise_sum(&c.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>()) / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    Ok(ShapleyEstimate {
        phi,
        se,
        permutations: n_perms,
        v_all: values[&key(&vec![true; n])],
        v_empty: values[&key(&vec![false; n])],
        contributions: contrib,
    })
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Observations from scenes disjoint from the evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationBank {
    pub map_ids: BTreeSet<String>,
    pub observations: Vec<Observation>,
}

impl ObservationBank {
    pub fn from_logs(logs: &[TrajectoryLog]) -> Self {
        ObservationBank {
            map_ids: logs.iter().map(|l| l.header.episode.map_id.clone()).collect(),
            observations: logs.iter().flat_map(|l| l.steps.iter().map(|s| s.obs.clone())).collect(),
        }
    }
}

/// Replaces every modality outside `keep` with the background's.
pub struct Substitution<'a> {
    pub background: &'a [Observation],
    pub keep: Vec<Player>,
    pub rng: ChaCha8Rng,
}

impl ObservationTransform for Substitution<'_> {
    fn apply(&mut self, obs: &mut Observation) {
        let k = self.rng.random_range(0..self.background.len());
        let bg = &self.background[k];
        let mut out = bg.clone();
        for p in &self.keep {
            p.copy(obs, &mut out);
        }
        *obs = out;
    }
}

/// The navigation game: players are observation modalities and the value is
/// SR or SPL over an episode set.
pub struct NavigationGame<'a, F> {
    pub tasks: &'a TaskSet,
    pub world: &'a WorldConfig,
    pub harness: &'a HarnessOpts,
    pub background: &'a ObservationBank,
    pub players: Vec<Player>,
    pub metric: ValueMetric,
    pub seed: u64,
    pub make_policy: F,
}

impl<F> NavigationGame<'_, F>
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    pub fn validate(&self) -> Result<()> {
        if self.background.observations.is_empty() {
            return Err(Error::Empty("background observations"));
        }
        if self.tasks.episodes.is_empty() {
            return Err(Error::Empty("evaluation episodes"));
        }
        if let Some(m) = self.tasks.episodes.iter().find(|e| self.background.map_ids.contains(&e.map_id)) {
            return Err(Error::InvalidParams(format!("background shares map {} with the evaluation set", m.map_id)));
        }
        let unique: BTreeSet<_> = self.players.iter().collect();
        if unique.len() != self.players.len() || self.players.is_empty() {
            return Err(Error::InvalidParams("players must be distinct and non-empty".into()));
        }
        Ok(())
    }

    pub fn run(&self, keep: &[Player]) -> Result<Vec<TrajectoryLog>> {
        self.tasks
            .episodes
            .par_iter()
            .enumerate()
            .map(|(i, ep)| {
                let grid = self.tasks.map(&ep.map_id)?;
                let mut policy = (self.make_policy)();
                let ep_seed = derive_seed(self.seed, i as u64);
                let mut sub = Substitution {
                    background: &self.background.observations,
                    keep: keep.to_vec(),
                    rng: ChaCha8Rng::seed_from_u64(derive_seed(ep_seed, 0x5A4B)),
                };
                let mut opts = RunOptions::new(self.harness.clone(), ep_seed);
                opts.transform = Some(&mut sub);
                run_episode(grid, ep, self.world, policy.as_mut(), &mut opts)
            })
            .collect()
    }
}

impl<F> CoalitionGame for NavigationGame<'_, F>
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    fn players(&self) -> usize {
        self.players.len()
    }

    fn value(&self, coalition: &[bool]) -> Result<f64> {
        // modalities that are not players always stay genuine
        let mut keep: Vec<Player> = Player::ALL.into_iter().filter(|p| !self.players.contains(p)).collect();
        keep.extend(self.players.iter().zip(coalition).filter(|(_, &b)| b).map(|(p, _)| *p));
        let results = results_from_logs(&self.run(&keep)?);
        match self.metric {
            ValueMetric::Sr => success_rate(&results),
            ValueMetric::Spl => spl(&results),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerValue {
    pub player: Player,
    pub phi: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub metric: ValueMetric,
    pub permutations: usize,
    pub episodes: usize,
    pub v_all: f64,
    pub v_empty: f64,
    pub players: Vec<PlayerValue>,
    #[serde(skip)]
    pub contributions: Vec<Vec<f64>>,
}

impl ShapleyReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["player", "phi", "se", "permutations", "metric"])?;
        let metric = match self.metric {
            ValueMetric::Sr => "sr",
            ValueMetric::Spl => "spl",
        };
        for p in &self.players {
            w.write_record([p.player.name(), &p.phi.to_string(), &p.se.to_string(), &self.permutations.to_string(), metric])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn phi(&self, player: Player) -> Option<&PlayerValue> {
        self.players.iter().find(|p| p.player == player)
    }

    /// Paired standard error of the difference between two players' values.
    pub fn diff_se(&self, a: Player, b: Player) -> Option<f64> {
        let i = self.players.iter().position(|p| p.player == a)?;
        let j = self.players.iter().position(|p| p.player == b)?;
        Some(paired_se(self.contributions.get(i)?, self.contributions.get(j)?))
    }
}

/// Shapley importance of observation modalities for a policy.
#[allow(clippy::too_many_arguments)]
pub fn shapley_importance<F>(
    tasks: &TaskSet,
    world: &WorldConfig,
    harness: &HarnessOpts,
    background: &ObservationBank,
    players: &[Player],
    metric: ValueMetric,
    n_perms: usize,
    seed: u64,
    make_policy: F,
) -> Result<ShapleyReport>
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    let game = NavigationGame {
        tasks,
        world,
        harness,
        background,
        players: players.to_vec(),
        metric,
        seed,
        make_policy,
    };
    game.validate()?;
    let est = shapley_permutations(&game, n_perms, derive_seed(seed, 0x5348))?;
    Ok(ShapleyReport {
        metric,
        permutations: n_perms,
        episodes: tasks.episodes.len(),
        v_all: est.v_all,
        v_empty: est.v_empty,
        players: players
            .iter()
            .zip(est.phi.iter().zip(&est.se))
            .map(|(&player, (&phi, &se))| PlayerValue { player, phi, se })
            .collect(),
        contributions: est.contributions,
    })
}
