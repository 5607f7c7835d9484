//! Latent-state datasets: per-step estimator latents with poses, actions and
//! goals, split by episode.
//!
//! On disk a dataset is a `manifest.json` plus a `latents.bin` record file.
//! The record file is little-endian:
//!
//! ```text
//! magic    8 bytes  "NAVLAT01"
//! dim      u32      latent width
//! rows     u32      number of records
//! records  rows x { episode u32, t u32, pose 3 x f64, onboard 3 x f64,
//!                   action u32, h dim x f64 }
//! ```
//!
//! `episode` indexes the manifest's episode list. Poses are ground truth in
//! the episode-start frame; `onboard` is the odometry pose the agent saw.

use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, ReferenceEstimator};
use crate::geometry::{polar_to_cartesian, Pose};
use crate::io::write_atomic;
use crate::policy::Policy;
use crate::world::{run_task_set, HarnessOpts, TaskSet, TrajectoryLog, WorldConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 8] = b"NAVLAT01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidParams(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentStep {
    pub t: usize,
    pub pose: [f64; 3],
    pub onboard: [f64; 3],
    pub action: usize,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub id: String,
    pub map_id: String,
    pub split: Split,
    /// World pose of the episode frame.
    pub start_pose: Pose,
    /// Goal in cartesian episode coordinates.
    pub goal: [f64; 2],
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentEpisode {
    pub meta: EpisodeMeta,
    pub steps: Vec<LatentStep>,
}

impl LatentEpisode {
    /// World pose of step `k`.
    pub fn world_pose(&self, k: usize) -> Pose {
        let p = self.steps[k].pose;
        self.meta.start_pose.compose(&Pose::new(p[0], p[1], p[2]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.8, val: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    /// Split tag per episode index.
    pub fn assign(&self, n: usize) -> Result<Vec<Split>> {
        if !(self.train >= 0.0 && self.val >= 0.0 && self.train + self.val <= 1.0 + 1e-12) {
            return Err(Error::InvalidParams("split fractions must be >= 0 and sum to <= 1".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let n_train = (self.train * n as f64).round() as usize;
        let n_val = ((self.val * n as f64).round() as usize).min(n - n_train.min(n));
        let mut out = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            out[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub rows: usize,
    pub split: SplitSpec,
    pub episodes: Vec<EpisodeMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentDataset {
    pub dim: usize,
    pub split: SplitSpec,
    pub episodes: Vec<LatentEpisode>,
}

impl LatentDataset {
    pub fn rows(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn episodes_in(&self, split: Split) -> impl Iterator<Item = &LatentEpisode> {
        self.episodes.iter().filter(move |e| e.meta.split == split)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.episodes {
            if e.meta.rows != e.steps.len() {
                return Err(Error::Parse(format!("episode {} row count mismatch", e.meta.id)));
            }
            if e.steps.iter().any(|s| s.h.len() != self.dim) {
                return Err(Error::Parse(format!("episode {} has a latent of the wrong width", e.meta.id)));
            }
        }
        Ok(())
    }

    /// Builds a dataset from trajectory logs. Logs recorded with latents are
    /// used as is; otherwise the reference estimator is replayed over the
    /// logged observations.
    pub fn from_logs(logs: &[TrajectoryLog], est: &EstimatorConfig, split: SplitSpec) -> Result<Self> {
        if logs.is_empty() {
            return Err(Error::Empty("trajectory logs"));
        }
        let tags = split.assign(logs.len())?;
        let mut dim = None;
        let mut episodes = Vec::with_capacity(logs.len());
        for (log, tag) in logs.iter().zip(tags) {
            let latents = match log.steps.iter().map(|s| s.latent.clone()).collect::<Option<Vec<_>>>() {
                Some(l) if !l.is_empty() => l,
                _ => replay_estimator(log, est),
            };
            let start = log.header.episode.start_pose;
            let inv = start.inverse();
            let steps: Vec<LatentStep> = log
                .steps
                .iter()
                .zip(latents)
                .map(|(s, h)| {
                    let p = inv.compose(&Pose::new(s.state.x, s.state.y, s.state.theta));
                    LatentStep {
                        t: s.t,
                        pose: [p.x, p.y, p.theta],
                        onboard: s.obs.odom_pose,
                        action: s.command.index,
                        h,
                    }
                })
                .collect();
            if let Some(first) = steps.first() {
                match dim {
                    None => dim = Some(first.h.len()),
                    Some(d) if d != first.h.len() => {
                        return Err(Error::Parse("latent width differs between logs".into()));
                    }
                    _ => {}
                }
            }
            let g = log.header.episode.goal_polar;
            episodes.push(LatentEpisode {
                meta: EpisodeMeta {
                    id: log.header.episode.id.clone(),
                    map_id: log.header.episode.map_id.clone(),
                    split: tag,
                    start_pose: start,
                    goal: polar_to_cartesian(g[0], g[1]),
                    rows: steps.len(),
                },
                steps,
            });
        }
        let ds = LatentDataset { dim: dim.ok_or(Error::Empty("logged steps"))?, split, episodes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: "navlab-latent".into(),
            version: 1,
            dim: self.dim,
            rows: self.rows(),
            split: self.split,
            episodes: self.episodes.iter().map(|e| e.meta.clone()).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.rows() * (44 + 8 * self.dim + 8));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        for (ei, e) in self.episodes.iter().enumerate() {
            for s in &e.steps {
                out.extend_from_slice(&(ei as u32).to_le_bytes());
                out.extend_from_slice(&(s.t as u32).to_le_bytes());
                for v in s.pose.iter().chain(&s.onboard) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&(s.action as u32).to_le_bytes());
                for v in &s.h {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_parts(manifest: Manifest, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Parse("not a latent record file".into()));
        }
        let dim = r.u32()? as usize;
        let rows = r.u32()? as usize;
        if dim != manifest.dim || rows != manifest.rows {
            return Err(Error::Parse("record file does not match manifest".into()));
        }
        let mut episodes: Vec<LatentEpisode> = manifest
            .episodes
            .into_iter()
            .map(|meta| LatentEpisode { steps: Vec::with_capacity(meta.rows), meta })
            .collect();
        for _ in 0..rows {
            let ei = r.u32()? as usize;
            let t = r.u32()? as usize;
            let mut pose = [0.0; 3];
            let mut onboard = [0.0; 3];
            for v in pose.iter_mut().chain(onboard.iter_mut()) {
                *v = r.f64()?;
            }
            let action = r.u32()? as usize;
            let h = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let ep = episodes.get_mut(ei).ok_or_else(|| Error::Parse(format!("episode index {ei} out of range")))?;
            ep.steps.push(LatentStep { t, pose, onboard, action, h });
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes in record file".into()));
        }
        let ds = LatentDataset { dim, split: manifest.split, episodes };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes `manifest.json` and `latents.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("latents.bin"), &self.to_bytes())?;
        let mut json = serde_json::to_vec_pretty(&self.manifest())?;
        json.push(b'\n');
        write_atomic(&dir.join("manifest.json"), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != "navlab-latent" || manifest.version != 1 {
            return Err(Error::Parse(format!("unsupported dataset format {} v{}", manifest.format, manifest.version)));
        }
        LatentDataset::from_parts(manifest, &std::fs::read(dir.join("latents.bin"))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| Error::Parse("truncated record file".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Latents of the reference estimator replayed over a log's observations.
pub fn replay_estimator(log: &TrajectoryLog, cfg: &EstimatorConfig) -> Vec<Vec<f64>> {
    let mut est = ReferenceEstimator::new(cfg.clone(), log.header.dynamics, log.header.sensors.clone());
    let dt = log.header.dynamics.decision_dt();
    log.steps
        .iter()
        .map(|s| {
            if s.memory_zeroed {
                est.reset();
            }
            est.update(&s.obs, dt);
            est.latent()
        })
        .collect()
}

/// Runs `tasks` with the reference estimator attached and packs the result.
pub fn collect_latent_logs<F>(
    tasks: &TaskSet,
    world: &WorldConfig,
    harness: &HarnessOpts,
    est: &EstimatorConfig,
    split: SplitSpec,
    seed: u64,
    make_policy: F,
) -> Result<LatentDataset>
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    let logs = run_task_set(tasks, world, harness, Some(est), true, seed, make_policy)?;
    LatentDataset::from_logs(&logs, est, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_sized() {
        let tags = SplitSpec::default().assign(10).unwrap();
        let count = |s| tags.iter().filter(|&&t| t == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (8, 1, 1));
        assert_eq!(tags, SplitSpec::default().assign(10).unwrap());
    }

    #[test]
    fn bytes_roundtrip() {
        let step = |t| LatentStep { t, pose: [t as f64, 0.5, -0.1], onboard: [0.0; 3], action: 24, h: vec![1.5, -2.0] };
        let ds = LatentDataset {
            dim: 2,
            split: SplitSpec::default(),
            episodes: vec![LatentEpisode {
                meta: EpisodeMeta {
                    id: "e0".into(),
                    map_id: "m".into(),
                    split: Split::Train,
                    start_pose: Pose::IDENTITY,
                    goal: [1.0, 2.0],
                    rows: 2,
                },
                steps: vec![step(0), step(1)],
            }],
        };
        let back = LatentDataset::from_parts(ds.manifest(), &ds.to_bytes()).unwrap();
        assert_eq!(back, ds);
        assert!(LatentDataset::from_parts(ds.manifest(), &ds.to_bytes()[..20]).is_err());
    }
}
