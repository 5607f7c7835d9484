//! Policy interface and a few fixed policies.

use crate::dynamics::{Command, DynParams, RobotState, STOP_INDEX};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::world::{Episode, Observation, OccupancyGrid};
use std::sync::Arc;

/// Static information handed to a policy when an episode starts.
pub struct EpisodeContext<'a> {
    pub grid: &'a Arc<OccupancyGrid>,
    pub episode: &'a Episode,
}

/// What a policy receives at each decision step.
pub struct PolicyInput<'a> {
    pub obs: &'a Observation,
    /// Ground-truth world state, for privileged policies.
    pub truth: &'a RobotState,
    pub time: f64,
    /// Pose estimate of an attached estimator, in the episode frame.
    pub estimate: Option<Pose>,
}

pub trait Policy: Send {
    fn name(&self) -> String;

    fn begin_episode(&mut self, _ctx: &EpisodeContext<'_>) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> Result<Command>;

    /// Clears any recurrent memory.
    fn reset_memory(&mut self) {}

    /// Called when the episode frame is redefined at `estimate`, the
    /// agent's pose in the old frame.
    fn on_frame_reset(&mut self, _estimate: Pose) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext<'_>) -> Result<()> {
        (**self).begin_episode(ctx)
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> Result<Command> {
        (**self).act(input)
    }

    fn reset_memory(&mut self) {
        (**self).reset_memory()
    }

    fn on_frame_reset(&mut self, estimate: Pose) {
        (**self).on_frame_reset(estimate)
    }
}

/// Repeats one action forever.
#[derive(Clone, Debug)]
pub struct ConstantPolicy {
    pub command: Command,
}

impl ConstantPolicy {
    pub fn new(index: usize, params: &DynParams) -> Result<Self> {
        Ok(ConstantPolicy { command: Command::from_index(index, params)? })
    }

    /// The zero-velocity command.
    pub fn zero(params: &DynParams) -> Self {
        ConstantPolicy { command: Command::from_index(3, params).expect("zero action exists") }
    }
}

impl Policy for ConstantPolicy {
    fn name(&self) -> String {
        format!("constant:{}", self.command.index)
    }

    fn act(&mut self, _input: &PolicyInput<'_>) -> Result<Command> {
        Ok(self.command)
    }
}

/// Plays back a fixed list of action ids, then STOP.
#[derive(Clone, Debug)]
pub struct ReplayPolicy {
    actions: Vec<usize>,
    params: DynParams,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn new(actions: Vec<usize>, params: DynParams) -> Result<Self> {
        for &a in &actions {
            Command::from_index(a, &params)?;
        }
        Ok(ReplayPolicy { actions, params, cursor: 0 })
    }
}

impl Policy for ReplayPolicy {
    fn name(&self) -> String {
        "replay".into()
    }

    fn begin_episode(&mut self, _ctx: &EpisodeContext<'_>) -> Result<()> {
        self.cursor = 0;
        Ok(())
    }

    fn act(&mut self, _input: &PolicyInput<'_>) -> Result<Command> {
        let idx = self.actions.get(self.cursor).copied().unwrap_or(STOP_INDEX);
        self.cursor += 1;
        Command::from_index(idx, &self.params).map_err(|_| Error::InvalidCommand(idx))
    }
}
