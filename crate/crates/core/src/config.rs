//! Run configuration shared by the command line tool and the service.

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::planner::ExpertConfig;
use crate::probing::{OccupancyProbeConfig, ProbeConfig, SplitSpec};
use crate::shapley::{Player, ValueMetric};
use crate::world::{EpisodeGenConfig, HarnessOpts, MapGenConfig, WorldConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    pub k: usize,
    pub horizon: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig { k: 64, horizon: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapleyConfig {
    pub permutations: usize,
    pub metric: ValueMetric,
    pub players: Vec<Player>,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        ShapleyConfig { permutations: 200, metric: ValueMetric::Sr, players: Player::ALL.to_vec() }
    }
}

/// Every tunable of a run. Missing sections take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub expert: ExpertConfig,
    pub harness: HarnessOpts,
    pub estimator: EstimatorConfig,
    pub map_gen: MapGenConfig,
    pub episode_gen: EpisodeGenConfig,
    pub bank: BankConfig,
    pub split: SplitSpec,
    pub probe: ProbeConfig,
    pub occupancy: OccupancyProbeConfig,
    pub shapley: ShapleyConfig,
}

impl LabConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: LabConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::InvalidParams(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.harness.validate()?;
        self.expert.weights.validate()?;
        self.expert.dynamics.validate()?;
        self.probe.validate()?;
        self.occupancy.validate()?;
        if self.bank.k == 0 || self.bank.horizon == 0 {
            return Err(Error::InvalidParams("bank needs K > 0 and T > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = LabConfig::from_json(br#"{"seed": 9, "bank": {"k": 8}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.bank.k, 8);
        assert_eq!(cfg.bank.horizon, 20);
        assert_eq!(cfg.world, WorldConfig::default());
    }

    #[test]
    fn unknown_section_is_rejected() {
        assert!(matches!(LabConfig::from_json(br#"{"wrld": {}}"#), Err(Error::InvalidParams(_))));
    }
}
