//! Corrupted environments, distance to belief and sensitivity sweeps.

use crate::dynamics::{rollout_actions, Command, DynParams, Mode, RobotState, NUM_MOTION_ACTIONS};
use crate::error::{Error, Result};
use crate::metrics::{results_from_logs, summarize};
use crate::policy::Policy;
use crate::world::{derive_seed, run_task_set, HarnessOpts, TaskSet, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// D_belief above which an environment counts as highly corrupted.
pub const HIGHLY_CORRUPTED_M: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionAxis {
    /// Every damping ratio times `factor`.
    Damping,
    /// Every response time times `factor`.
    ResponseTime,
    MaxVelocity,
    /// Per-step odometry drift mean, meters.
    OdomNoiseMean,
    /// Per-step odometry drift std, meters.
    OdomNoiseStd,
}

impl CorruptionAxis {
    pub fn is_dynamics(self) -> bool {
        matches!(self, CorruptionAxis::Damping | CorruptionAxis::ResponseTime | CorruptionAxis::MaxVelocity)
    }

    pub fn name(self) -> &'static str {
        match self {
            CorruptionAxis::Damping => "damping",
            CorruptionAxis::ResponseTime => "response_time",
            CorruptionAxis::MaxVelocity => "max_velocity",
            CorruptionAxis::OdomNoiseMean => "odom_noise_mean",
            CorruptionAxis::OdomNoiseStd => "odom_noise_std",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "damping" => Ok(CorruptionAxis::Damping),
            "response_time" => Ok(CorruptionAxis::ResponseTime),
            "max_velocity" => Ok(CorruptionAxis::MaxVelocity),
            "odom_noise_mean" => Ok(CorruptionAxis::OdomNoiseMean),
            "odom_noise_std" => Ok(CorruptionAxis::OdomNoiseStd),
            _ => Err(Error::InvalidParams(format!("unknown corruption axis `{s}`"))),
        }
    }
}

/// One environment change along a single axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub axis: CorruptionAxis,
    /// Multiplier for dynamics axes; 1 for odometry axes.
    pub factor: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
}

impl CorruptionSpec {
    /// `value` is a factor on dynamics axes and meters on odometry axes.
    pub fn new(axis: CorruptionAxis, value: f64) -> Result<Self> {
        let spec = match axis {
            CorruptionAxis::OdomNoiseMean => CorruptionSpec { axis, factor: 1.0, noise_mean: value, noise_std: 0.0 },
            CorruptionAxis::OdomNoiseStd => CorruptionSpec { axis, factor: 1.0, noise_mean: 0.0, noise_std: value },
            _ => CorruptionSpec { axis, factor: value, noise_mean: 0.0, noise_std: 0.0 },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor.is_finite()) {
            return Err(Error::InvalidParams("corruption factor must be > 0".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite() && self.noise_mean.is_finite()) {
            return Err(Error::InvalidParams("noise std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn apply_dynamics(&self, p: &DynParams) -> DynParams {
        let mut q = *p;
        let f = self.factor;
        match self.axis {
            CorruptionAxis::Damping => {
                q.gamma_lin_acc *= f;
                q.gamma_lin_brake *= f;
                q.gamma_ang_acc *= f;
                q.gamma_ang_brake *= f;
            }
            CorruptionAxis::ResponseTime => {
                q.tau_lin_acc *= f;
                q.tau_lin_brake *= f;
                q.tau_ang_acc *= f;
                q.tau_ang_brake *= f;
            }
            CorruptionAxis::MaxVelocity => q.v_max *= f,
            _ => {}
        }
        q
    }

    pub fn apply(&self, w: &WorldConfig) -> WorldConfig {
        let mut out = w.clone();
        out.dynamics = self.apply_dynamics(&w.dynamics);
        match self.axis {
            CorruptionAxis::OdomNoiseMean => out.sensors.odom_noise.mean = self.noise_mean,
            CorruptionAxis::OdomNoiseStd => out.sensors.odom_noise.std = self.noise_std,
            _ => {}
        }
        out
    }
}

/// One action sequence with its initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankSequence {
    pub initial: RobotState,
    /// Action ids, resolved against each parameter set at rollout time.
    pub actions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBank {
    pub horizon: usize,
    pub seed: u64,
    pub sequences: Vec<BankSequence>,
}

impl ActionBank {
    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::Empty("action bank"));
        }
        if self.sequences.iter().any(|s| s.actions.len() != self.horizon || self.horizon == 0) {
            return Err(Error::Parse("bank sequences must all have the bank horizon".into()));
        }
        Ok(())
    }

    /// A bank of `k` copies of one straight full-speed sequence from rest.
    pub fn straight(k: usize, horizon: usize) -> Self {
        ActionBank {
            horizon,
            seed: 0,
            sequences: vec![BankSequence { initial: RobotState::default(), actions: vec![24; horizon] }; k],
        }
    }

    /// `k` sequences of uniformly drawn motion actions, all from rest.
    pub fn random(k: usize, horizon: usize, seed: u64) -> Result<Self> {
        if k == 0 || horizon == 0 {
            return Err(Error::InvalidParams("bank needs K > 0 and T > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences = (0..k)
            .map(|_| BankSequence {
                initial: RobotState::default(),
                actions: (0..horizon).map(|_| rng.random_range(0..NUM_MOTION_ACTIONS)).collect(),
            })
            .collect();
        Ok(ActionBank { horizon, seed, sequences })
    }
}

/// Harvests `k` windows of `horizon` consecutive actions from policy
/// rollouts on `tasks`, with the logged state at the window start.
pub fn build_action_bank<F>(
    tasks: &TaskSet,
    world: &WorldConfig,
    k: usize,
    horizon: usize,
    seed: u64,
    make_policy: F,
) -> Result<ActionBank>
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    if k == 0 || horizon == 0 {
        return Err(Error::InvalidParams("bank needs K > 0 and T > 0".into()));
    }
    let logs = run_task_set(tasks, world, &HarnessOpts::default(), None, false, seed, make_policy)?;
    let usable: Vec<_> = logs.iter().filter(|l| l.steps.len() >= horizon).collect();
    if usable.is_empty() {
        return Err(Error::Infeasible(format!("no rollout has {horizon} steps")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut sequences = Vec::with_capacity(k);
    for _ in 0..k {
        let log = usable[rng.random_range(0..usable.len())];
        let start = rng.random_range(0..=log.steps.len() - horizon);
        let window = &log.steps[start..start + horizon];
        sequences.push(BankSequence {
            initial: window[0].state,
            actions: window.iter().map(|s| s.command.motion_index()).collect(),
        });
    }
    Ok(ActionBank { horizon, seed, sequences })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefDistance {
    pub value: f64,
    /// Mean divergence of each sequence over `t = 1..T`.
    pub per_sequence: Vec<f64>,
}

fn rollout_positions(seq: &BankSequence, params: &DynParams, mode: Mode) -> Result<Vec<[f64; 2]>> {
    let cmds = seq
        .actions
        .iter()
        .map(|&a| Command::from_index(a, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(rollout_actions(&seq.initial, &cmds, params, mode)?.iter().map(|s| s.position()).collect())
}

/// Mean positional divergence between collision-free rollouts of the bank
/// under `nominal` and `corrupted`, averaged over `t = 1..T` and sequences.
pub fn d_belief(nominal: &DynParams, corrupted: &DynParams, bank: &ActionBank, mode: Mode) -> Result<BeliefDistance> {
    bank.validate()?;
    nominal.validate()?;
    corrupted.validate()?;
    let per_sequence = bank
        .sequences
        .par_iter()
        .map(|seq| {
            let a = rollout_positions(seq, nominal, mode)?;
            let b = rollout_positions(seq, corrupted, mode)?;
            let sum: f64 = a.iter().zip(&b).map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1])).sum();
            Ok(sum / bank.horizon as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let value = per_sequence.iter().sum::<f64>() / per_sequence.len() as f64;
    Ok(BeliefDistance { value, per_sequence })
}

/// Expected accumulated odometry drift over `t = 1..T`, on the same scale
/// as [`d_belief`].
pub fn odometry_drift_distance(mean: f64, std: f64, horizon: usize) -> f64 {
    let sum: f64 = (1..=horizon).map(|t| mean.abs() * t as f64 + std * (t as f64).sqrt()).sum();
    sum / horizon as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: CorruptionAxis,
    pub factor: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub d_belief: f64,
    pub sr: f64,
    pub sr_se: f64,
    pub spl: f64,
    pub sct: f64,
    pub n_episodes: usize,
    pub seed: u64,
    pub highly_corrupted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub k_sequences: usize,
    pub horizon: usize,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn rows_for(&self, axis: CorruptionAxis) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.axis == axis).collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "axis", "f", "noise_mean", "noise_std", "d_belief", "sr", "sr_se", "spl", "sct", "n_episodes", "seed",
            "highly_corrupted",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.axis.name().to_string(),
                r.factor.to_string(),
                r.noise_mean.to_string(),
                r.noise_std.to_string(),
                r.d_belief.to_string(),
                r.sr.to_string(),
                r.sr_se.to_string(),
                r.spl.to_string(),
                r.sct.to_string(),
                r.n_episodes.to_string(),
                r.seed.to_string(),
                u8::from(r.highly_corrupted).to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Evaluates the policy in every corrupted world of `specs`.
pub fn sensitivity_sweep<F>(
    tasks: &TaskSet,
    base: &WorldConfig,
    specs: &[CorruptionSpec],
    bank: &ActionBank,
    seed: u64,
    make_policy: F,
) -> Result<SweepReport>
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    bank.validate()?;
    if tasks.episodes.is_empty() {
        return Err(Error::Empty("episode set"));
    }
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let world = spec.apply(base);
        let d = if spec.axis.is_dynamics() {
            d_belief(&base.dynamics, &world.dynamics, bank, base.mode)?.value
        } else {
            odometry_drift_distance(spec.noise_mean, spec.noise_std, bank.horizon)
        };
        let logs = run_task_set(tasks, &world, &HarnessOpts::default(), None, false, seed, &make_policy)?;
        let s = summarize(&results_from_logs(&logs))?;
        rows.push(SweepRow {
            axis: spec.axis,
            factor: spec.factor,
            noise_mean: spec.noise_mean,
            noise_std: spec.noise_std,
            d_belief: d,
            sr: s.sr,
            sr_se: s.sr_se,
            spl: s.spl,
            sct: s.sct,
            n_episodes: s.n,
            seed,
            highly_corrupted: d > HIGHLY_CORRUPTED_M,
        });
    }
    Ok(SweepReport { k_sequences: bank.sequences.len(), horizon: bank.horizon, seed, rows })
}
