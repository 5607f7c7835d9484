//! Trajectory logs and their JSON-lines encoding.
//!
//! A log file holds one or more episodes. Each episode is a `header` record,
//! one `step` record per decision step and an `end` record:
//!
//! ```text
//! {"kind":"header","episode":{..},"dynamics":{..},"mode":"second_order",..}
//! {"kind":"step","t":0,"time":0.0,"state":{..},"obs":{..},"command":{..},"reward":-0.01,..}
//! {"kind":"end","outcome":"success","steps":31,"path_length":4.2,..}
//! ```
//!
//! `state` is the ground truth before `command` is applied; `time` is in
//! seconds and all lengths in meters.

use super::episode::Episode;
use super::harness::HarnessOpts;
use super::sensors::{Observation, SensorConfig};
use crate::dynamics::{Command, DynParams, Mode, RobotState};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Timeout,
    StoppedFar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub episode: Episode,
    pub dynamics: DynParams,
    pub mode: Mode,
    pub sensors: SensorConfig,
    pub harness: HarnessOpts,
    pub robot_radius: f64,
    pub policy: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub time: f64,
    pub state: RobotState,
    pub obs: Observation,
    pub command: Command,
    pub reward: f64,
    pub collision: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
    /// Policy memory was cleared before acting at this step.
    #[serde(default)]
    pub memory_zeroed: bool,
    /// The episode frame was redefined before acting at this step.
    #[serde(default)]
    pub frame_reset: bool,
    /// World pose of the episode frame used by `obs`.
    pub frame: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEnd {
    pub outcome: Outcome,
    pub steps: usize,
    /// Episode duration `c` in seconds.
    pub episode_time: f64,
    /// Ground-truth path length.
    pub path_length: f64,
    /// Geodesic start-to-goal distance.
    pub geodesic_optimal: f64,
    /// Lower-bound traversal time of the geodesic.
    pub optimal_time: f64,
    pub final_state: RobotState,
    pub collisions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Step(StepRecord),
    End(LogEnd),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub end: LogEnd,
}

impl TrajectoryLog {
    pub fn success(&self) -> bool {
        self.end.outcome == Outcome::Success
    }

    /// Ground-truth states at every decision step plus the final state.
    pub fn states(&self) -> Vec<RobotState> {
        let mut v: Vec<RobotState> = self.steps.iter().map(|s| s.state).collect();
        v.push(self.end.final_state);
        v
    }

    pub fn records(&self) -> Vec<LogRecord> {
        let mut out = Vec::with_capacity(self.steps.len() + 2);
        out.push(LogRecord::Header(self.header.clone()));
        out.extend(self.steps.iter().cloned().map(LogRecord::Step));
        out.push(LogRecord::End(self.end.clone()));
        out
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        crate::io::to_jsonl(&self.records())
    }
}

/// Encodes several logs into one JSON-lines buffer.
pub fn logs_to_jsonl(logs: &[TrajectoryLog]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for l in logs {
        out.extend(l.to_jsonl()?);
    }
    Ok(out)
}

/// Groups a record stream back into episodes.
pub fn logs_from_records(records: Vec<LogRecord>) -> Result<Vec<TrajectoryLog>> {
    let mut out = Vec::new();
    let mut header: Option<LogHeader> = None;
    let mut steps = Vec::new();
    for r in records {
        match r {
            LogRecord::Header(h) => {
                if header.is_some() {
                    return Err(Error::Parse("header before the previous episode ended".into()));
                }
                header = Some(h);
                steps.clear();
            }
            LogRecord::Step(s) => {
                if header.is_none() {
                    return Err(Error::Parse("step record without a header".into()));
                }
                if let Some(prev) = steps.last() {
                    let prev: &StepRecord = prev;
                    if s.time <= prev.time {
                        return Err(Error::Parse("step times must increase".into()));
                    }
                }
                steps.push(s);
            }
            LogRecord::End(e) => {
                let h = header.take().ok_or_else(|| Error::Parse("end record without a header".into()))?;
                out.push(TrajectoryLog { header: h, steps: std::mem::take(&mut steps), end: e });
            }
        }
    }
    if header.is_some() {
        return Err(Error::Parse("truncated log: missing end record".into()));
    }
    Ok(out)
}

pub fn parse_logs<R: BufRead>(reader: R) -> Result<Vec<TrajectoryLog>> {
    logs_from_records(crate::io::parse_jsonl(reader)?)
}

pub fn read_logs(path: &Path) -> Result<Vec<TrajectoryLog>> {
    logs_from_records(crate::io::read_jsonl(path)?)
}

/// Reads and concatenates several log files.
pub fn read_log_files(paths: &[std::path::PathBuf]) -> Result<Vec<TrajectoryLog>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_logs(p)?);
    }
    Ok(out)
}

pub fn write_logs(path: &Path, logs: &[TrajectoryLog]) -> Result<()> {
    crate::io::write_atomic(path, &logs_to_jsonl(logs)?)
}
