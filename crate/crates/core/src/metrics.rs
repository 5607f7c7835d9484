//! Episode-set navigation metrics: SR, SPL and SCT.

use crate::error::{Error, Result};
use crate::world::TrajectoryLog;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    #[serde(default)]
    pub episode_id: String,
    pub success: bool,
    /// Ground-truth path length.
    pub path_length: f64,
    /// Geodesic start-to-goal distance.
    pub geodesic_optimal: f64,
    /// Episode duration in seconds.
    pub episode_time: f64,
    /// Lower-bound completion time.
    pub optimal_time: f64,
}

impl EpisodeResult {
    pub fn from_log(log: &TrajectoryLog) -> Self {
        EpisodeResult {
            episode_id: log.header.episode.id.clone(),
            success: log.success(),
            path_length: log.end.path_length,
            geodesic_optimal: log.end.geodesic_optimal,
            episode_time: log.end.episode_time,
            optimal_time: log.end.optimal_time,
        }
    }

    fn spl_term(&self) -> f64 {
        if self.success {
            self.geodesic_optimal / self.path_length.max(self.geodesic_optimal)
        } else {
            0.0
        }
    }

    fn sct_term(&self) -> f64 {
        if self.success {
            self.optimal_time / self.episode_time.max(self.optimal_time)
        } else {
            0.0
        }
    }
}

fn mean_of(results: &[EpisodeResult], f: impl Fn(&EpisodeResult) -> f64) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("episode results"));
    }
    Ok(results.iter().map(f).sum::<f64>() / results.len() as f64)
}

pub fn success_rate(results: &[EpisodeResult]) -> Result<f64> {
    mean_of(results, |r| f64::from(u8::from(r.success)))
}

/// Success weighted by path length.
pub fn spl(results: &[EpisodeResult]) -> Result<f64> {
    mean_of(results, EpisodeResult::spl_term)
}

/// Success weighted by completion time.
pub fn sct(results: &[EpisodeResult]) -> Result<f64> {
    mean_of(results, EpisodeResult::sct_term)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub sr: f64,
    /// Standard error of the success rate.
    pub sr_se: f64,
    pub spl: f64,
    pub sct: f64,
}

pub fn summarize(results: &[EpisodeResult]) -> Result<Summary> {
    let sr = success_rate(results)?;
    let n = results.len();
    Ok(Summary { n, sr, sr_se: (sr * (1.0 - sr) / n as f64).sqrt(), spl: spl(results)?, sct: sct(results)? })
}

pub fn results_from_logs(logs: &[TrajectoryLog]) -> Vec<EpisodeResult> {
    logs.iter().map(EpisodeResult::from_log).collect()
}

/// CSV with one row per episode and a trailing `summary` row.
pub fn metrics_csv(results: &[EpisodeResult]) -> Result<Vec<u8>> {
    let s = summarize(results)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["episode_id", "success", "path_length", "geodesic_optimal", "episode_time", "optimal_time"])?;
    for r in results {
        w.write_record([
            r.episode_id.clone(),
            u8::from(r.success).to_string(),
            r.path_length.to_string(),
            r.geodesic_optimal.to_string(),
            r.episode_time.to_string(),
            r.optimal_time.to_string(),
        ])?;
    }
    w.write_record([
        "summary".to_string(),
        s.sr.to_string(),
        format!("spl={}", s.spl),
        format!("sct={}", s.sct),
        format!("n={}", s.n),
        format!("sr_se={}", s.sr_se),
    ])?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(success: bool, l: f64, ls: f64, c: f64, ts: f64) -> EpisodeResult {
        EpisodeResult {
            episode_id: String::new(),
            success,
            path_length: l,
            geodesic_optimal: ls,
            episode_time: c,
            optimal_time: ts,
        }
    }

    #[test]
    fn identities() {
        assert_eq!(spl(&[r(true, 3.0, 3.0, 5.0, 5.0)]).unwrap(), 1.0);
        assert_eq!(spl(&[r(true, 6.0, 3.0, 5.0, 5.0)]).unwrap(), 0.5);
        assert_eq!(sct(&[r(true, 3.0, 3.0, 10.0, 5.0)]).unwrap(), 0.5);
        assert_eq!(spl(&[r(false, 3.0, 3.0, 5.0, 5.0)]).unwrap(), 0.0);
        assert_eq!(sct(&[r(false, 3.0, 3.0, 5.0, 5.0), r(true, 1.0, 1.0, 2.0, 2.0)]).unwrap(), 0.5);
    }

    #[test]
    fn success_rate_granularity() {
        let v: Vec<_> = (0..40).map(|i| r(i >= 3, 1.0, 1.0, 1.0, 1.0)).collect();
        assert!((success_rate(&v).unwrap() - 0.925).abs() < 1e-12);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(spl(&[]), Err(Error::Empty(_))));
        assert!(sct(&[]).is_err());
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn csv_has_summary_row() {
        let text = String::from_utf8(metrics_csv(&[r(true, 1.0, 1.0, 1.0, 1.0)]).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().last().unwrap().starts_with("summary,1"));
    }
}
