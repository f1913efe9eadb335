//! Parity task: each agent sees only its own hidden bit and is rewarded for
//! announcing the XOR of the bits in its patch, so neighbors must talk.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_actions, Environment, Lifecycle, StepOutcome};
use crate::dccp::AgentTopology;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncGridConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
}

fn default_horizon() -> usize {
    8
}

fn default_patch() -> usize {
    3
}

impl Default for SyncGridConfig {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            horizon: default_horizon(),
            patch_size: default_patch(),
        }
    }
}

/// XOR of each agent's bit with its neighbors' bits.
pub fn parities(topology: &AgentTopology, bits: &[u8]) -> Vec<u8> {
    (0..topology.num_agents())
        .map(|i| topology.neighbors(i).iter().fold(bits[i], |p, &j| p ^ bits[j]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyncGrid {
    config: SyncGridConfig,
    topology: AgentTopology,
    bits: Vec<u8>,
    parity: Vec<u8>,
    t: usize,
    lifecycle: Lifecycle,
    reward_sum: f64,
    late_reward_sum: f64,
}

impl SyncGrid {
    pub fn new(config: SyncGridConfig) -> Result<Self> {
        if config.horizon == 0 {
            return Err(config_err("sync grid horizon must be positive"));
        }
        let topology = AgentTopology::full_grid(config.rows, config.cols, config.patch_size)?;
        let n = topology.num_agents();
        Ok(Self {
            config,
            topology,
            bits: vec![0; n],
            parity: vec![0; n],
            t: 0,
            lifecycle: Lifecycle::Fresh,
            reward_sum: 0.0,
            late_reward_sum: 0.0,
        })
    }

    pub fn config(&self) -> &SyncGridConfig {
        &self.config
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn parities(&self) -> &[u8] {
        &self.parity
    }

    /// Starts an episode with the given bits instead of sampled ones.
    pub fn reset_with_bits(&mut self, bits: &[u8]) -> Result<Array2<f64>> {
        if bits.len() != self.topology.num_agents() || bits.iter().any(|&b| b > 1) {
            return Err(config_err(format!(
                "expected {} bits in {{0, 1}}, got {bits:?}",
                self.topology.num_agents()
            )));
        }
        self.bits = bits.to_vec();
        self.parity = parities(&self.topology, &self.bits);
        self.t = 0;
        self.lifecycle = Lifecycle::Running;
        self.reward_sum = 0.0;
        self.late_reward_sum = 0.0;
        Ok(self.observe())
    }

    fn observe(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.bits.len(), 1), |(i, _)| f64::from(self.bits[i]))
    }
}

impl Environment for SyncGrid {
    fn topology(&self) -> &AgentTopology {
        &self.topology
    }

    fn obs_size(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn bootstrap_at_horizon(&self) -> bool {
        false
    }

    fn reset(&mut self, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<u8> = (0..self.topology.num_agents()).map(|_| u8::from(rng.random::<bool>())).collect();
        self.reset_with_bits(&bits).expect("sampled bits are valid")
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        self.lifecycle.check_step()?;
        check_actions(actions, self.topology.num_agents(), 2)?;
        let rewards: Vec<f64> = actions
            .iter()
            .zip(&self.parity)
            .map(|(&a, &p)| if a == usize::from(p) { 1.0 } else { 0.0 })
            .collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        self.reward_sum += mean;
        if self.t >= 1 {
            self.late_reward_sum += mean;
        }
        self.t += 1;
        let done = self.t >= self.config.horizon;
        if done {
            self.lifecycle = Lifecycle::Done;
        }
        Ok(StepOutcome {
            observations: self.observe(),
            rewards,
            done,
        })
    }

    /// `mean_reward` averages over every step; `late_reward` skips the first
    /// step, where no neighbor information can have arrived yet.
    fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if self.t > 0 {
            m.insert("mean_reward".to_string(), self.reward_sum / self.t as f64);
        }
        if self.t > 1 {
            m.insert("late_reward".to_string(), self.late_reward_sum / (self.t - 1) as f64);
        }
        m
    }
}
