//! Value function network and its ablation variants.
//!
//! For the full method each agent's DQN input is `[o, s_est, q_est]` where
//! `s_est` is a DCCP aggregation of the predicted observations and `q_est`
//! is the neighbor mean of the predicted Q-values plus a DCCP compensation
//! term. Predictions arrive detached: gradients stop at this network.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dccp::{neighbor_mean, AgentTopology, DccpCache, DccpParams};
use crate::error::{config_err, Error, Result};
use crate::nn::{Mlp, MlpCache, ParameterBlock, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentVariant {
    /// State estimation plus enhanced mean-field estimate.
    Full,
    /// State estimation only; `q_est` omitted.
    DccpOnly,
    /// Independent learners on the own observation.
    Iql,
    /// Own observation plus mean of the neighbors' previous actions.
    Mfq,
}

impl AgentVariant {
    pub const ALL: [AgentVariant; 4] = [Self::Full, Self::DccpOnly, Self::Iql, Self::Mfq];

    pub fn dqn_input_dim(self, obs_size: usize, num_actions: usize) -> usize {
        match self {
            Self::Full => 2 * obs_size + num_actions,
            Self::DccpOnly => 2 * obs_size,
            Self::Iql => obs_size,
            Self::Mfq => obs_size + num_actions,
        }
    }

    pub fn uses_state_estimate(self) -> bool {
        matches!(self, Self::Full | Self::DccpOnly)
    }

    pub fn uses_mean_field_estimate(self) -> bool {
        matches!(self, Self::Full)
    }

    pub fn uses_prev_actions(self) -> bool {
        matches!(self, Self::Mfq)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::DccpOnly => "dccp_only",
            Self::Iql => "iql",
            Self::Mfq => "mfq",
        }
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| config_err(format!("unknown agent variant `{s}`")))
    }
}

/// Per-agent inputs for one batch; rows are `B * N`.
#[derive(Debug, Clone, Copy)]
pub struct VfnInputs<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub predicted_obs: Option<ArrayView2<'a, f64>>,
    pub predicted_q: Option<ArrayView2<'a, f64>>,
    pub mean_prev_actions: Option<ArrayView2<'a, f64>>,
}

impl<'a> VfnInputs<'a> {
    pub fn observation_only(obs: ArrayView2<'a, f64>) -> Self {
        Self {
            obs,
            predicted_obs: None,
            predicted_q: None,
            mean_prev_actions: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VfnCache {
    se: Option<DccpCache>,
    me: Option<DccpCache>,
    dqn: MlpCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VfnNet {
    variant: AgentVariant,
    obs_size: usize,
    num_actions: usize,
    se_comm: Option<DccpParams>,
    me_comm: Option<DccpParams>,
    dqn: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VfnDims<'a> {
    pub obs_size: usize,
    pub num_actions: usize,
    pub num_agents: usize,
    pub dqn_hidden: &'a [usize],
    pub kernels: usize,
    pub kernel_size: usize,
}

impl VfnDims<'_> {
    fn dqn_sizes(&self, variant: AgentVariant) -> Vec<usize> {
        let mut sizes = vec![variant.dqn_input_dim(self.obs_size, self.num_actions)];
        sizes.extend_from_slice(self.dqn_hidden);
        sizes.push(self.num_actions);
        sizes
    }
}

impl VfnNet {
    pub fn new<R: Rng + ?Sized>(variant: AgentVariant, dims: VfnDims<'_>, rng: &mut R) -> Result<Self> {
        let dqn = Mlp::new("vfn.dqn", &dims.dqn_sizes(variant), rng)?;
        let se_comm = if variant.uses_state_estimate() {
            Some(DccpParams::new(
                "vfn.se",
                dims.obs_size,
                dims.kernels,
                dims.kernel_size,
                dims.num_agents,
                rng,
            )?)
        } else {
            None
        };
        let me_comm = if variant.uses_mean_field_estimate() {
            Some(DccpParams::new(
                "vfn.me",
                dims.num_actions,
                dims.kernels,
                dims.kernel_size,
                dims.num_agents,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            variant,
            obs_size: dims.obs_size,
            num_actions: dims.num_actions,
            se_comm,
            me_comm,
            dqn,
        })
    }

    /// Closed-form parameter count.
    pub fn param_count(variant: AgentVariant, dims: VfnDims<'_>) -> usize {
        let mut total = Mlp::param_count(&dims.dqn_sizes(variant));
        if variant.uses_state_estimate() {
            total += DccpParams::param_count(dims.obs_size, dims.kernels, dims.kernel_size, dims.num_agents);
        }
        if variant.uses_mean_field_estimate() {
            total += DccpParams::param_count(dims.num_actions, dims.kernels, dims.kernel_size, dims.num_agents);
        }
        total
    }

    pub fn variant(&self) -> AgentVariant {
        self.variant
    }

    pub fn obs_size(&self) -> usize {
        self.obs_size
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dqn(&self) -> &Mlp {
        &self.dqn
    }

    pub fn dqn_mut(&mut self) -> &mut Mlp {
        &mut self.dqn
    }

    pub fn se_comm(&self) -> Option<&DccpParams> {
        self.se_comm.as_ref()
    }

    pub fn se_comm_mut(&mut self) -> Option<&mut DccpParams> {
        self.se_comm.as_mut()
    }

    pub fn me_comm(&self) -> Option<&DccpParams> {
        self.me_comm.as_ref()
    }

    pub fn me_comm_mut(&mut self) -> Option<&mut DccpParams> {
        self.me_comm.as_mut()
    }

    fn require<'a>(what: &str, v: Option<ArrayView2<'a, f64>>, variant: AgentVariant) -> Result<ArrayView2<'a, f64>> {
        v.ok_or_else(|| config_err(format!("variant `{variant}` requires {what}")))
    }

    /// DCCP aggregation of the (detached) predicted observations.
    pub fn state_estimate(&self, topology: &AgentTopology, predicted_obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let se = self
            .se_comm
            .as_ref()
            .ok_or_else(|| config_err(format!("variant `{}` has no state estimation", self.variant)))?;
        se.infer(topology, predicted_obs)
    }

    /// Neighbor mean of the predicted Q-values plus the DCCP compensation.
    pub fn mean_field_estimate(&self, topology: &AgentTopology, predicted_q: ArrayView2<f64>) -> Result<Array2<f64>> {
        let me = self
            .me_comm
            .as_ref()
            .ok_or_else(|| config_err(format!("variant `{}` has no mean-field estimate", self.variant)))?;
        let mean = neighbor_mean(topology, predicted_q)?;
        Ok(mean + me.infer(topology, predicted_q)?)
    }

    /// Assembles the DQN input for this variant and evaluates the head.
    pub fn q_values(
        &self,
        obs: ArrayView2<f64>,
        state_estimate: Option<ArrayView2<f64>>,
        mean_field_estimate: Option<ArrayView2<f64>>,
        mean_prev_actions: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        let input = self.dqn_input(obs, state_estimate, mean_field_estimate, mean_prev_actions)?;
        self.dqn.infer(input.view())
    }

    fn dqn_input(
        &self,
        obs: ArrayView2<f64>,
        state_estimate: Option<ArrayView2<f64>>,
        mean_field_estimate: Option<ArrayView2<f64>>,
        mean_prev_actions: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        let v = self.variant;
        if obs.ncols() != self.obs_size {
            return Err(config_err(format!(
                "observation width {} does not match {}",
                obs.ncols(),
                self.obs_size
            )));
        }
        let unexpected = match v {
            AgentVariant::Full => mean_prev_actions.is_some(),
            AgentVariant::DccpOnly => mean_field_estimate.is_some() || mean_prev_actions.is_some(),
            AgentVariant::Iql => {
                state_estimate.is_some() || mean_field_estimate.is_some() || mean_prev_actions.is_some()
            }
            AgentVariant::Mfq => state_estimate.is_some() || mean_field_estimate.is_some(),
        };
        if unexpected {
            return Err(config_err(format!("inputs do not match variant `{v}`")));
        }
        let parts: Vec<ArrayView2<f64>> = match v {
            AgentVariant::Full => vec![
                obs,
                Self::require("a state estimate", state_estimate, v)?,
                Self::require("a mean-field estimate", mean_field_estimate, v)?,
            ],
            AgentVariant::DccpOnly => vec![obs, Self::require("a state estimate", state_estimate, v)?],
            AgentVariant::Iql => vec![obs],
            AgentVariant::Mfq => vec![obs, Self::require("mean previous actions", mean_prev_actions, v)?],
        };
        concatenate(Axis(1), &parts).map_err(|e| config_err(format!("cannot assemble DQN input: {e}")))
    }

    pub fn forward(&self, topology: &AgentTopology, inputs: VfnInputs<'_>) -> Result<(Array2<f64>, VfnCache)> {
        let v = self.variant;
        let (s_est, se) = match &self.se_comm {
            Some(se) => {
                let pred = Self::require("predicted observations", inputs.predicted_obs, v)?;
                let (out, cache) = se.forward(topology, pred)?;
                (Some(out), Some(cache))
            }
            None => (None, None),
        };
        let (q_est, me) = match &self.me_comm {
            Some(me) => {
                let pred = Self::require("predicted Q-values", inputs.predicted_q, v)?;
                let (comp, cache) = me.forward(topology, pred)?;
                (Some(neighbor_mean(topology, pred)? + comp), Some(cache))
            }
            None => (None, None),
        };
        let mean_prev = if v.uses_prev_actions() {
            Some(Self::require("mean previous actions", inputs.mean_prev_actions, v)?)
        } else {
            None
        };
        let input = self.dqn_input(
            inputs.obs,
            s_est.as_ref().map(|a| a.view()),
            q_est.as_ref().map(|a| a.view()),
            mean_prev,
        )?;
        let (q, dqn) = self.dqn.forward(input.view())?;
        Ok((q, VfnCache { se, me, dqn }))
    }

    pub fn infer(&self, topology: &AgentTopology, inputs: VfnInputs<'_>) -> Result<Array2<f64>> {
        let v = self.variant;
        let s_est = match &self.se_comm {
            Some(se) => Some(se.infer(topology, Self::require("predicted observations", inputs.predicted_obs, v)?)?),
            None => None,
        };
        let q_est = match &self.me_comm {
            Some(_) => Some(self.mean_field_estimate(
                topology,
                Self::require("predicted Q-values", inputs.predicted_q, v)?,
            )?),
            None => None,
        };
        let mean_prev = if v.uses_prev_actions() {
            Some(Self::require("mean previous actions", inputs.mean_prev_actions, v)?)
        } else {
            None
        };
        self.q_values(
            inputs.obs,
            s_est.as_ref().map(|a| a.view()),
            q_est.as_ref().map(|a| a.view()),
            mean_prev,
        )
    }

    /// Backpropagates `dq` into the DQN head and both DCCP layers. The
    /// cotangents of the predictions are dropped.
    pub fn backward(&mut self, cache: &VfnCache, dq: ArrayView2<f64>) -> Result<()> {
        let d_input = self.dqn.backward(&cache.dqn, dq)?;
        let d = self.obs_size;
        if let Some(se) = self.se_comm.as_mut() {
            let c = cache
                .se
                .as_ref()
                .ok_or_else(|| Error::Usage("missing state-estimation cache".into()))?;
            se.backward(c, d_input.slice(s![.., d..2 * d]))?;
        }
        if let Some(me) = self.me_comm.as_mut() {
            let c = cache
                .me
                .as_ref()
                .ok_or_else(|| Error::Usage("missing mean-field cache".into()))?;
            me.backward(c, d_input.slice(s![.., 2 * d..2 * d + self.num_actions]))?;
        }
        Ok(())
    }
}

impl Parameterized for VfnNet {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        let mut b = self.dqn.blocks();
        b.extend(self.se_comm.blocks());
        b.extend(self.me_comm.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut b = self.dqn.blocks_mut();
        b.extend(self.se_comm.blocks_mut());
        b.extend(self.me_comm.blocks_mut());
        b
    }
}

/// Argmax over unmasked entries, ties to the lowest index.
pub fn greedy_action(q: &[f64], mask: Option<&[bool]>) -> Result<usize> {
    if let Some(m) = mask {
        if m.len() != q.len() {
            return Err(config_err(format!(
                "mask length {} does not match {} Q-values",
                m.len(),
                q.len()
            )));
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (a, &v) in q.iter().enumerate() {
        if mask.is_some_and(|m| !m[a]) {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((a, v)),
        }
    }
    best.map(|(a, _)| a)
        .ok_or_else(|| Error::Usage("every action is masked".into()))
}
