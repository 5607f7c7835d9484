//! Occupancy-grid worlds, episodes, sensors and the stepping engine.

pub mod engine;
pub mod episode;
pub mod grid;
pub mod harness;
pub mod log;
pub mod sensors;

pub use engine::{geodesic_field, optimal_time, Engine, RewardConfig, StepOutput, WorldConfig};
pub use episode::{generate_episodes, Episode, EpisodeGenConfig, TaskSet};
pub use grid::{GridMeta, MapGenConfig, OccupancyGrid};
pub use harness::{derive_seed, run_episode, run_task_set, HarnessOpts, ObservationTransform, RunOptions};
pub use log::{read_log_files, read_logs, write_logs, LogEnd, LogHeader, LogRecord, Outcome, StepRecord, TrajectoryLog};
pub use sensors::{cast_ray, raycast_scan, NoiseSpec, Observation, SensorConfig};
