//! Joint replay: one record per environment timestep holding every agent.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{config_err, Result};

/// One joint timestep. Matrices are `[N, ·]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransition {
    /// Step index within the episode.
    pub t: usize,
    pub prev_obs: Array2<f64>,
    pub prev_q: Array2<f64>,
    pub obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Behavior-network Q-values at collection time.
    pub q: Array2<f64>,
    pub next_obs: Array2<f64>,
    /// Mean of each agent's neighbors' one-hot actions at `t - 1` (zero at
    /// `t = 0`) and at `t`; only the mean-field baseline reads these.
    pub prev_mean_actions: Array2<f64>,
    pub mean_actions: Array2<f64>,
    pub terminal: bool,
}

impl JointTransition {
    pub fn num_agents(&self) -> usize {
        self.actions.len()
    }
}

/// Fixed-capacity FIFO buffer with seeded uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<JointTransition>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(config_err("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            records: VecDeque::with_capacity(capacity),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total records ever pushed.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, record: JointTransition) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        self.inserted += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &JointTransition> {
        self.records.iter()
    }

    pub fn get(&self, index: usize) -> Option<&JointTransition> {
        self.records.get(index)
    }

    /// `count` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        (0..count).map(|_| rng.random_range(0..self.records.len())).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let records: Vec<&JointTransition> = indices
            .iter()
            .map(|&i| {
                self.records
                    .get(i)
                    .ok_or_else(|| config_err(format!("replay index {i} out of range")))
            })
            .collect::<Result<_>>()?;
        Batch::stack(&records)
    }
}

/// Timesteps stacked row-wise: every matrix has `B * N` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub timesteps: usize,
    pub num_agents: usize,
    pub prev_obs: Array2<f64>,
    pub prev_q: Array2<f64>,
    pub obs: Array2<f64>,
    pub q: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub prev_mean_actions: Array2<f64>,
    pub mean_actions: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Array1<f64>,
    /// One flag per row, copied from the row's timestep.
    pub terminal: Vec<bool>,
}

fn stack<'a>(parts: impl Iterator<Item = ArrayView2<'a, f64>>) -> Result<Array2<f64>> {
    let views: Vec<ArrayView2<f64>> = parts.collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| config_err(format!("cannot stack batch: {e}")))
}

impl Batch {
    pub fn stack(records: &[&JointTransition]) -> Result<Self> {
        let first = records.first().ok_or_else(|| config_err("empty batch"))?;
        let n = first.num_agents();
        if records.iter().any(|r| r.num_agents() != n) {
            return Err(config_err("batch mixes agent counts"));
        }
        Ok(Self {
            timesteps: records.len(),
            num_agents: n,
            prev_obs: stack(records.iter().map(|r| r.prev_obs.view()))?,
            prev_q: stack(records.iter().map(|r| r.prev_q.view()))?,
            obs: stack(records.iter().map(|r| r.obs.view()))?,
            q: stack(records.iter().map(|r| r.q.view()))?,
            next_obs: stack(records.iter().map(|r| r.next_obs.view()))?,
            prev_mean_actions: stack(records.iter().map(|r| r.prev_mean_actions.view()))?,
            mean_actions: stack(records.iter().map(|r| r.mean_actions.view()))?,
            actions: records.iter().flat_map(|r| r.actions.iter().copied()).collect(),
            rewards: records.iter().flat_map(|r| r.rewards.iter().copied()).collect(),
            terminal: records.iter().flat_map(|r| std::iter::repeat_n(r.terminal, n)).collect(),
        })
    }
}
