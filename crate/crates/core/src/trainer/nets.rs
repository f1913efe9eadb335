//! The networks one run owns: online VFN, its frozen target copy, and the
//! predictors the variant needs.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dccp::AgentTopology;
use crate::error::{Error, Result};
use crate::mean_field::mean_action_of_indices;
use crate::nn::{checkpoint, copy_values, ParameterBlock, Parameterized};
use crate::predictors::{OpnNet, PrnNet};
use crate::vfn::{AgentVariant, VfnDims, VfnInputs, VfnNet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSizes {
    pub dqn_hidden: Vec<usize>,
    pub encoder_hidden: usize,
    pub kernels: usize,
    pub kernel_size: usize,
}

impl Default for NetSizes {
    fn default() -> Self {
        Self {
            dqn_hidden: vec![64, 64],
            encoder_hidden: 32,
            kernels: 4,
            kernel_size: 3,
        }
    }
}

/// Predictions for one batch of rows; absent when the variant has no such
/// predictor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Predictions {
    pub obs: Option<Array2<f64>>,
    pub q: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct AgentNets {
    variant: AgentVariant,
    topology: AgentTopology,
    obs_size: usize,
    num_actions: usize,
    pub vfn: VfnNet,
    pub target: VfnNet,
    pub prn: Option<PrnNet>,
    pub opn: Option<OpnNet>,
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(
        variant: AgentVariant,
        topology: AgentTopology,
        obs_size: usize,
        num_actions: usize,
        sizes: &NetSizes,
        rng: &mut R,
    ) -> Result<Self> {
        let n = topology.num_agents();
        let dims = VfnDims {
            obs_size,
            num_actions,
            num_agents: n,
            dqn_hidden: &sizes.dqn_hidden,
            kernels: sizes.kernels,
            kernel_size: sizes.kernel_size,
        };
        let vfn = VfnNet::new(variant, dims, rng)?;
        let opn = if variant.uses_state_estimate() {
            Some(OpnNet::new(
                obs_size,
                num_actions,
                sizes.encoder_hidden,
                sizes.kernels,
                sizes.kernel_size,
                n,
                rng,
            )?)
        } else {
            None
        };
        let prn = if variant.uses_mean_field_estimate() {
            Some(PrnNet::new(
                obs_size,
                num_actions,
                sizes.encoder_hidden,
                sizes.kernels,
                sizes.kernel_size,
                n,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            variant,
            topology,
            obs_size,
            num_actions,
            target: vfn.clone(),
            vfn,
            prn,
            opn,
        })
    }

    pub fn variant(&self) -> AgentVariant {
        self.variant
    }

    pub fn topology(&self) -> &AgentTopology {
        &self.topology
    }

    pub fn obs_size(&self) -> usize {
        self.obs_size
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_agents(&self) -> usize {
        self.topology.num_agents()
    }

    /// Predictor outputs for the current step from the previous step's data.
    pub fn predict(&self, prev_obs: ArrayView2<f64>, prev_q: ArrayView2<f64>) -> Result<Predictions> {
        Ok(Predictions {
            obs: self
                .opn
                .as_ref()
                .map(|p| p.infer(&self.topology, prev_obs, prev_q))
                .transpose()?,
            q: self
                .prn
                .as_ref()
                .map(|p| p.infer(&self.topology, prev_obs, prev_q))
                .transpose()?,
        })
    }

    pub fn inputs<'a>(
        &self,
        obs: ArrayView2<'a, f64>,
        predictions: &'a Predictions,
        mean_prev_actions: ArrayView2<'a, f64>,
    ) -> VfnInputs<'a> {
        VfnInputs {
            obs,
            predicted_obs: predictions.obs.as_ref().map(|a| a.view()),
            predicted_q: predictions.q.as_ref().map(|a| a.view()),
            mean_prev_actions: self.variant.uses_prev_actions().then_some(mean_prev_actions),
        }
    }

    /// Online Q-values for one step (or a batch of steps).
    pub fn q_values(
        &self,
        obs: ArrayView2<f64>,
        prev_obs: ArrayView2<f64>,
        prev_q: ArrayView2<f64>,
        mean_prev_actions: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let pred = self.predict(prev_obs, prev_q)?;
        self.vfn.infer(&self.topology, self.inputs(obs, &pred, mean_prev_actions))
    }

    /// Copies the online VFN into the target network.
    pub fn sync_target(&mut self) -> Result<()> {
        copy_values(&self.vfn, &mut self.target)
    }

    /// Every trainable block of the online networks.
    pub fn online_blocks(&self) -> Vec<&ParameterBlock> {
        let mut b = self.vfn.blocks();
        b.extend(self.prn.blocks());
        b.extend(self.opn.blocks());
        b
    }

    pub fn online_blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut b = self.vfn.blocks_mut();
        b.extend(self.prn.blocks_mut());
        b.extend(self.opn.blocks_mut());
        b
    }

    pub fn save(&self, stem: &Path, mut metadata: BTreeMap<String, String>) -> Result<checkpoint::Manifest> {
        metadata.insert("variant".into(), self.variant.to_string());
        checkpoint::save(stem, &self.online_blocks(), metadata)
    }

    /// Loads online parameters and re-syncs the target.
    pub fn load(&mut self, stem: &Path) -> Result<checkpoint::Manifest> {
        let manifest = checkpoint::read_manifest(stem)?;
        if let Some(v) = manifest.metadata.get("variant") {
            if v != self.variant.as_str() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint holds variant `{v}`, expected `{}`",
                    self.variant
                )));
            }
        }
        checkpoint::load_into(stem, &mut self.online_blocks_mut())?;
        self.sync_target()?;
        Ok(manifest)
    }
}

/// `[N, A]` mean of each agent's neighbors' one-hot actions; the zero matrix
/// when there is no previous step.
pub fn neighbor_mean_actions(topology: &AgentTopology, actions: Option<&[usize]>, num_actions: usize) -> Result<Array2<f64>> {
    let n = topology.num_agents();
    let mut out = Array2::zeros((n, num_actions));
    if let Some(actions) = actions {
        for i in 0..n {
            let nb: Vec<usize> = topology.neighbors(i).iter().map(|&j| actions[j]).collect();
            let mean = mean_action_of_indices(&nb, num_actions)?;
            out.row_mut(i).assign(&ndarray::ArrayView1::from(mean.values()));
        }
    }
    Ok(out)
}
