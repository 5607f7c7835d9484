//! Probing pipeline: latent datasets, future-pose probes, latent rollout and
//! local-occupancy probes.

pub mod dataset;
pub mod linalg;
pub mod mlp;
pub mod occupancy;
pub mod probe;

pub use dataset::{collect_latent_logs, replay_estimator, LatentDataset, LatentEpisode, LatentStep, Split, SplitSpec};
pub use linalg::{spearman, AffineMap, RidgeAccumulator, Standardizer};
pub use mlp::{Adam, Mlp};
pub use occupancy::{
    aggregate_on_map, evaluate_occupancy, occupancy_target, train_occupancy_probe, OccupancyProbe,
    OccupancyProbeConfig, OccupancyReport,
};
pub use probe::{evaluate_probe, pose_loss, train_probe, ProbeConfig, ProbeModel, ProbeReport, ProbeVariant};
