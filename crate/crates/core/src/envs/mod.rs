//! Environments sharing one contract: per-agent observations of fixed width,
//! one discrete action per agent, per-agent rewards and a fixed horizon.

mod sync_grid;
mod traffic;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dccp::AgentTopology;
use crate::error::{Error, Result};

pub use sync_grid::{parities, SyncGrid, SyncGridConfig};
pub use traffic::{
    Boundary, FlowConfig, Heading, Lane, Phase, RateSchedule, Route, TrafficConfig, TrafficGridLite, LANES,
    LANES_PER_INTERSECTION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// `[N, D_o]`.
    pub observations: Array2<f64>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

pub trait Environment {
    fn topology(&self) -> &AgentTopology;
    fn obs_size(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn horizon(&self) -> usize;

    fn num_agents(&self) -> usize {
        self.topology().num_agents()
    }

    /// Whether the horizon is a time limit (bootstrap through it) rather than
    /// an absorbing terminal state.
    fn bootstrap_at_horizon(&self) -> bool;

    fn reset(&mut self, seed: u64) -> Array2<f64>;

    /// Errors if called before `reset`, after `done`, or with a bad action.
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome>;

    /// Episode metrics accumulated since the last reset.
    fn metrics(&self) -> BTreeMap<String, f64>;

    /// Vehicles currently queued at each agent, for environments that have
    /// queues.
    fn queue_totals(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Environment selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvSpec {
    TrafficGridLite(TrafficConfig),
    SyncGrid(SyncGridConfig),
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::TrafficGridLite(c) => Box::new(TrafficGridLite::new(c.clone())?),
            EnvSpec::SyncGrid(c) => Box::new(SyncGrid::new(c.clone())?),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            EnvSpec::TrafficGridLite(_) => "traffic_grid_lite",
            EnvSpec::SyncGrid(_) => "sync_grid",
        }
    }
}

pub(crate) fn check_actions(actions: &[usize], agents: usize, num_actions: usize) -> Result<()> {
    if actions.len() != agents {
        return Err(Error::Usage(format!("expected {agents} actions, got {}", actions.len())));
    }
    if let Some((i, a)) = actions.iter().enumerate().find(|(_, &a)| a >= num_actions) {
        return Err(Error::Usage(format!("agent {i} chose action {a} outside 0..{num_actions}")));
    }
    Ok(())
}

/// Tracks reset/step/done ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) enum Lifecycle {
    #[default]
    Fresh,
    Running,
    Done,
}

impl Lifecycle {
    pub(crate) fn check_step(self) -> Result<()> {
        match self {
            Lifecycle::Fresh => Err(Error::Usage("step called before reset".into())),
            Lifecycle::Done => Err(Error::Usage("step called after the episode ended".into())),
            Lifecycle::Running => Ok(()),
        }
    }
}
