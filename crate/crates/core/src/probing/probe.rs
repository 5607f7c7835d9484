//! Future-pose probes on latent states.
//!
//! All probes read the latent `h_t` only; they never see later latents or
//! observations. Targets are `(x, y, cos θ, sin θ)` in the episode frame.

use super::dataset::{LatentDataset, LatentEpisode, Split};
use super::linalg::{AffineMap, RidgeAccumulator, Standardizer};
use super::mlp::{Adam, Mlp};
use crate::dynamics::NUM_ACTIONS;
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeVariant {
    Linear,
    LinearPrevAction,
    LatentRollout,
}

impl ProbeVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ProbeVariant::Linear),
            "linear_prev_action" => Ok(ProbeVariant::LinearPrevAction),
            "latent_rollout" => Ok(ProbeVariant::LatentRollout),
            _ => Err(Error::InvalidParams(format!("unknown probe variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub variant: ProbeVariant,
    pub horizon: usize,
    /// Ridge penalty on standardized features, per sample.
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    /// Gradient updates for the trained parts.
    pub steps: usize,
    pub hidden: usize,
    /// Width of the action/goal embedding.
    pub embed: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            variant: ProbeVariant::Linear,
            horizon: 20,
            lambda: 1e-4,
            lr: 1e-4,
            batch: 64,
            steps: 2000,
            hidden: 64,
            embed: 8,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParams("probe horizon must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lr > 0.0) || self.batch == 0 || self.hidden == 0 || self.embed == 0 {
            return Err(Error::InvalidParams("probe hyper-parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ProbeHeads {
    Linear { heads: Vec<AffineMap> },
    LinearPrevAction { heads: Vec<AffineMap>, mlp: Mlp },
    LatentRollout { transition: AffineMap, psi: Mlp, readout: AffineMap },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub horizon: usize,
    pub scaler: Standardizer,
    pub heads: ProbeHeads,
}

fn target(p: &[f64; 3]) -> [f64; 4] {
    [p[0], p[1], p[2].cos(), p[2].sin()]
}

fn to_pose(y: &[f64]) -> [f64; 3] {
    [y[0], y[1], y[3].atan2(y[2])]
}

/// Probing loss of one prediction and its gradient: squared position error
/// plus the L1 distance of the `(cos, sin)` pair.
pub fn pose_loss(pred: &[f64], truth: &[f64; 4]) -> (f64, [f64; 4]) {
    let d = [pred[0] - truth[0], pred[1] - truth[1], pred[2] - truth[2], pred[3] - truth[3]];
    let loss = d[0] * d[0] + d[1] * d[1] + d[2].abs() + d[3].abs();
    let sgn = |v: f64| if v == 0.0 { 0.0 } else { v.signum() };
    (loss, [2.0 * d[0], 2.0 * d[1], sgn(d[2]), sgn(d[3])])
}

fn action_goal_input(action: usize, goal: [f64; 2]) -> Vec<f64> {
    let mut x = vec![0.0; NUM_ACTIONS + 2];
    x[action.min(NUM_ACTIONS - 1)] = 1.0;
    x[NUM_ACTIONS] = goal[0];
    x[NUM_ACTIONS + 1] = goal[1];
    x
}

impl ProbeModel {
    pub fn variant(&self) -> ProbeVariant {
        match self.heads {
            ProbeHeads::Linear { .. } => ProbeVariant::Linear,
            ProbeHeads::LinearPrevAction { .. } => ProbeVariant::LinearPrevAction,
            ProbeHeads::LatentRollout { .. } => ProbeVariant::LatentRollout,
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.heads {
            ProbeHeads::Linear { heads } => heads.iter().all(AffineMap::is_finite),
            ProbeHeads::LinearPrevAction { heads, mlp } => {
                heads.iter().all(AffineMap::is_finite) && mlp.params.iter().all(|v| v.is_finite())
            }
            ProbeHeads::LatentRollout { transition, psi, readout } => {
                transition.is_finite() && readout.is_finite() && psi.params.iter().all(|v| v.is_finite())
            }
        }
    }

    /// Predicted poses `p_{t+1} .. p_{t+H}` from `h_t`. `actions[i]` is
    /// `a_{t+i}` and is only read by the action-conditioned variant.
    pub fn predict(&self, h: &[f64], actions: &[usize], goal: [f64; 2]) -> Result<Vec<[f64; 3]>> {
        self.predict_upto(h, actions, goal, self.horizon)
    }

    pub fn predict_upto(&self, h: &[f64], actions: &[usize], goal: [f64; 2], horizon: usize) -> Result<Vec<[f64; 3]>> {
        if h.len() != self.scaler.dim() {
            return Err(Error::InvalidParams(format!("latent width {} != {}", h.len(), self.scaler.dim())));
        }
        let horizon = horizon.min(self.horizon);
        let z = self.scaler.apply(h);
        match &self.heads {
            ProbeHeads::Linear { heads } => Ok(heads[..horizon].iter().map(|m| to_pose(&m.apply(&z))).collect()),
            ProbeHeads::LinearPrevAction { heads, mlp } => {
                if actions.len() < horizon {
                    return Err(Error::InvalidParams("action-conditioned probe needs one action per horizon".into()));
                }
                Ok(heads[..horizon]
                    .iter()
                    .zip(actions)
                    .map(|(m, &a)| {
                        let mut x = z.clone();
                        x.extend(mlp.apply(&action_goal_input(a, goal)));
                        to_pose(&m.apply(&x))
                    })
                    .collect())
            }
            ProbeHeads::LatentRollout { .. } => Ok(self.rollout(h, horizon)?.split_off(1)),
        }
    }

    /// Autoregressive latent rollout; entry `i` is the readout after `i`
    /// transitions, so entry 0 reads `h_t` itself.
    pub fn rollout(&self, h: &[f64], horizon: usize) -> Result<Vec<[f64; 3]>> {
        let ProbeHeads::LatentRollout { transition, psi, readout } = &self.heads else {
            return Err(Error::InvalidParams("rollout needs a latent_rollout probe".into()));
        };
        if h.len() != self.scaler.dim() {
            return Err(Error::InvalidParams(format!("latent width {} != {}", h.len(), self.scaler.dim())));
        }
        let mut z = self.scaler.apply(h);
        let mut out = vec![to_pose(&readout.apply(&z))];
        for _ in 0..horizon {
            let lin = transition.apply(&z);
            let res = psi.apply(&z);
            z = lin.iter().zip(&res).map(|(a, b)| a + b).collect();
            out.push(to_pose(&readout.apply(&z)));
        }
        Ok(out)
    }
}

struct Prepared<'a> {
    episodes: Vec<&'a LatentEpisode>,
    z: Vec<Vec<Vec<f64>>>,
}

fn prepare<'a>(ds: &'a LatentDataset, scaler: &Standardizer) -> Prepared<'a> {
    let episodes: Vec<&LatentEpisode> = ds.episodes_in(Split::Train).collect();
    let z = episodes.par_iter().map(|e| e.steps.iter().map(|s| scaler.apply(&s.h)).collect()).collect();
    Prepared { episodes, z }
}

/// Fits a probe on the dataset's train split.
pub fn train_probe(ds: &LatentDataset, cfg: &ProbeConfig) -> Result<ProbeModel> {
    cfg.validate()?;
    let train: Vec<&LatentEpisode> = ds.episodes_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    let longest = train.iter().map(|e| e.steps.len()).max().unwrap_or(0);
    if longest <= cfg.horizon {
        return Err(Error::InvalidParams(format!(
            "horizon {} exceeds every train episode (longest has {longest} steps)",
            cfg.horizon
        )));
    }
    let scaler = Standardizer::fit(train.iter().flat_map(|e| e.steps.iter().map(|s| s.h.as_slice())), ds.dim)?;
    let data = prepare(ds, &scaler);
    let heads = match cfg.variant {
        ProbeVariant::Linear => ProbeHeads::Linear { heads: fit_linear_heads(&data, cfg.horizon, cfg.lambda)? },
        ProbeVariant::LinearPrevAction => fit_prev_action(&data, cfg)?,
        ProbeVariant::LatentRollout => fit_rollout(&data, cfg)?,
    };
    let model = ProbeModel { horizon: cfg.horizon, scaler, heads };
    if !model.is_finite() {
        return Err(Error::NonFinite("probe parameters"));
    }
    Ok(model)
}

/// Closed-form ridge head per horizon over every window with `H` future
/// steps; all heads share the input statistics.
fn fit_linear_heads(data: &Prepared<'_>, horizon: usize, lambda: f64) -> Result<Vec<AffineMap>> {
    let d = data.z.first().and_then(|e| e.first()).map_or(0, Vec::len);
    let parts: Vec<Vec<RidgeAccumulator>> = data
        .episodes
        .par_iter()
        .zip(&data.z)
        .map(|(e, z)| {
            let mut inputs = RidgeAccumulator::new(d, 0);
            let mut outs: Vec<RidgeAccumulator> = (0..horizon).map(|_| RidgeAccumulator::new(d, 4)).collect();
            for t in 0..z.len().saturating_sub(horizon) {
                inputs.add_xx(&z[t], 1.0);
                for (i, acc) in outs.iter_mut().enumerate() {
                    acc.add_xy(&z[t], &target(&e.steps[t + i + 1].pose));
                }
            }
            outs.push(inputs);
            outs
        })
        .collect();
    let mut inputs = RidgeAccumulator::new(d, 0);
    for p in &parts {
        inputs.merge_inputs(&p[horizon]);
    }
    if inputs.count() == 0 {
        return Err(Error::Empty("probe windows"));
    }
    (0..horizon)
        .map(|i| {
            let mut acc = inputs.with_outputs(4);
            for p in &parts {
                acc.merge_xy(&p[i]);
            }
            acc.solve(lambda)
        })
        .collect()
}

fn fit_prev_action(data: &Prepared<'_>, cfg: &ProbeConfig) -> Result<ProbeHeads> {
    let d = data.z[0][0].len();
    let m = cfg.embed;
    let h = cfg.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // The latent part of each head is the closed-form linear probe and stays
    // fixed. The embedding network and its head weights are trained by Adam,
    // then the embedding weights are refit in closed form on the residuals.
    let lin = fit_linear_heads(data, h, cfg.lambda)?;
    let mut mlp = Mlp::new(NUM_ACTIONS + 2, cfg.hidden, m, false, &mut rng);
    let emb_len = 4 * m;
    let mut params = vec![0.0; h * emb_len + mlp.params.len()];
    let mut opt = Adam::new(params.len(), cfg.lr);
    let windows = windows(data, h);
    if windows.is_empty() {
        return Err(Error::Empty("probe windows"));
    }
    for _ in 0..cfg.steps {
        let mut grad = vec![0.0; params.len()];
        let (hg, mg) = grad.split_at_mut(h * emb_len);
        let (hp, _) = params.split_at(h * emb_len);
        for _ in 0..cfg.batch {
            let (ei, t) = windows[rng.random_range(0..windows.len())];
            let ep = data.episodes[ei];
            let z = &data.z[ei][t];
            for i in 0..h {
                let input = action_goal_input(ep.steps[t + i].action, ep.meta.goal);
                let (emb, cache) = mlp.forward(&input);
                let w = &hp[i * emb_len..(i + 1) * emb_len];
                let mut pred = lin[i].apply(z);
                for o in 0..4 {
                    pred[o] += (0..m).map(|k| w[o * m + k] * emb[k]).sum::<f64>();
                }
                let (_, g) = pose_loss(&pred, &target(&ep.steps[t + i + 1].pose));
                let mut gemb = vec![0.0; m];
                for o in 0..4 {
                    for k in 0..m {
                        hg[i * emb_len + o * m + k] += g[o] * emb[k];
                        gemb[k] += g[o] * w[o * m + k];
                    }
                }
                mlp.backward(&input, &cache, &gemb, mg);
            }
        }
        let scale = 1.0 / (cfg.batch * h) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        params[h * emb_len..].copy_from_slice(&mlp.params);
        opt.step(&mut params, &grad);
        mlp.params.copy_from_slice(&params[h * emb_len..]);
    }

    let parts: Vec<Vec<RidgeAccumulator>> = data
        .episodes
        .par_iter()
        .zip(&data.z)
        .map(|(e, z)| {
            let mut accs: Vec<RidgeAccumulator> = (0..h).map(|_| RidgeAccumulator::new(m, 4)).collect();
            for t in 0..z.len().saturating_sub(h) {
                for (i, acc) in accs.iter_mut().enumerate() {
                    let emb = mlp.apply(&action_goal_input(e.steps[t + i].action, e.meta.goal));
                    let base = lin[i].apply(&z[t]);
                    let y = target(&e.steps[t + i + 1].pose);
                    let r: Vec<f64> = (0..4).map(|o| y[o] - base[o] + lin[i].bias[o]).collect();
                    acc.add(&emb, &r);
                }
            }
            accs
        })
        .collect();
    let mut heads = Vec::with_capacity(h);
    for i in 0..h {
        let mut acc = RidgeAccumulator::new(m, 4);
        for p in &parts {
            acc.merge(&p[i]);
        }
        let e = acc.solve(cfg.lambda)?;
        let mut a = AffineMap::zeros(d + m, 4);
        for o in 0..4 {
            a.weights[o * (d + m)..o * (d + m) + d].copy_from_slice(&lin[i].weights[o * d..(o + 1) * d]);
            a.weights[o * (d + m) + d..(o + 1) * (d + m)].copy_from_slice(&e.weights[o * m..(o + 1) * m]);
        }
        a.bias = e.bias;
        heads.push(a);
    }
    Ok(ProbeHeads::LinearPrevAction { heads, mlp })
}

/// `(episode, t)` pairs with at least `min_ahead` future steps.
fn windows(data: &Prepared<'_>, min_ahead: usize) -> Vec<(usize, usize)> {
    data.z
        .iter()
        .enumerate()
        .flat_map(|(ei, z)| (0..z.len().saturating_sub(min_ahead)).map(move |t| (ei, t)))
        .collect()
}

fn fit_rollout(data: &Prepared<'_>, cfg: &ProbeConfig) -> Result<ProbeHeads> {
    let d = data.z[0][0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let parts: Vec<(RidgeAccumulator, RidgeAccumulator)> = data
        .episodes
        .par_iter()
        .zip(&data.z)
        .map(|(e, z)| {
            let mut tr = RidgeAccumulator::new(d, d);
            let mut rd = RidgeAccumulator::new(d, 4);
            for t in 0..z.len() {
                rd.add(&z[t], &target(&e.steps[t].pose));
                if t + 1 < z.len() {
                    tr.add(&z[t], &z[t + 1]);
                }
            }
            (tr, rd)
        })
        .collect();
    let mut tr = RidgeAccumulator::new(d, d);
    let mut rd = RidgeAccumulator::new(d, 4);
    for (a, b) in &parts {
        tr.merge(a);
        rd.merge(b);
    }
    let transition = tr.solve(cfg.lambda)?;
    let readout = rd.solve(cfg.lambda)?;

    // residual map trained on one-step prediction errors of the linear part
    let mut psi = Mlp::new(d, cfg.hidden, d, true, &mut rng);
    let mut opt = Adam::new(psi.params.len(), cfg.lr);
    let windows = windows(data, 1);
    if windows.is_empty() {
        return Err(Error::Empty("probe windows"));
    }
    for _ in 0..cfg.steps {
        let mut grad = vec![0.0; psi.params.len()];
        for _ in 0..cfg.batch {
            let (ei, t) = windows[rng.random_range(0..windows.len())];
            let (z0, z1) = (&data.z[ei][t], &data.z[ei][t + 1]);
            let lin = transition.apply(z0);
            let (res, cache) = psi.forward(z0);
            let g: Vec<f64> = (0..d).map(|k| 2.0 * (lin[k] + res[k] - z1[k]) / cfg.batch as f64).collect();
            psi.backward(z0, &cache, &g, &mut grad);
        }
        let mut p = psi.params.clone();
        opt.step(&mut p, &grad);
        psi.params = p;
    }
    Ok(ProbeHeads::LatentRollout { transition, psi, readout })
}

/// Mean errors per horizon on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub variant: ProbeVariant,
    pub split: Split,
    /// Mean Euclidean position error for horizons `1..=H`.
    pub pos_err: Vec<f64>,
    /// Mean absolute wrapped heading error for horizons `1..=H`.
    pub ang_err: Vec<f64>,
    /// Evaluated windows; each has a full horizon of future steps.
    pub windows: usize,
    pub mean_pos_err: f64,
    pub mean_ang_err: f64,
}

impl ProbeReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["horizon", "pos_err_m", "ang_err_rad", "windows"])?;
        for i in 0..self.pos_err.len() {
            w.write_record([
                (i + 1).to_string(),
                self.pos_err[i].to_string(),
                self.ang_err[i].to_string(),
                self.windows.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

pub fn evaluate_probe(model: &ProbeModel, ds: &LatentDataset, split: Split) -> Result<ProbeReport> {
    let eps: Vec<&LatentEpisode> = ds.episodes_in(split).collect();
    let h = model.horizon;
    let sums = eps
        .par_iter()
        .map(|e| -> Result<Vec<[f64; 3]>> {
            let mut acc = vec![[0.0; 3]; h];
            let actions: Vec<usize> = e.steps.iter().map(|s| s.action).collect();
            for t in 0..e.steps.len().saturating_sub(h) {
                let pred = model.predict(&e.steps[t].h, &actions[t..], e.meta.goal)?;
                for (i, p) in pred.iter().enumerate() {
                    let truth = e.steps[t + i + 1].pose;
                    acc[i][0] += (p[0] - truth[0]).hypot(p[1] - truth[1]);
                    acc[i][1] += wrap_angle(p[2] - truth[2]).abs();
                    acc[i][2] += 1.0;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tot = vec![[0.0; 3]; h];
    for s in &sums {
        for i in 0..h {
            for k in 0..3 {
                tot[i][k] += s[i][k];
            }
        }
    }
    let windows = tot[0][2];
    if windows == 0.0 {
        return Err(Error::Empty("evaluation windows"));
    }
    let pos_err: Vec<f64> = tot.iter().map(|v| v[0] / windows).collect();
    let ang_err: Vec<f64> = tot.iter().map(|v| v[1] / windows).collect();
    Ok(ProbeReport {
        variant: model.variant(),
        split,
        mean_pos_err: pos_err.iter().sum::<f64>() / h as f64,
        mean_ang_err: ang_err.iter().sum::<f64>() / h as f64,
        pos_err,
        ang_err,
        windows: windows as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_loss_ignores_full_turns() {
        let pred = [0.1, 0.2, 0.5f64.cos(), 0.5f64.sin()];
        let a = pose_loss(&pred, &target(&[0.0, 0.0, 0.3]));
        let b = pose_loss(&pred, &target(&[0.0, 0.0, 0.3 + 4.0 * std::f64::consts::PI]));
        assert!((a.0 - b.0).abs() < 1e-12);
    }
}
