//! Supervised predictors of the current step from the previous one.
//!
//! Both share one shape: a per-agent encoder (shared weights) maps the
//! previous `(observation, Q-values)` pair to a latent vector, and a DCCP
//! layer mixes each agent's latent with its neighbors'.
//!
//! - [`PrnNet`] predicts the current Q-values; latent width = action count.
//! - [`OpnNet`] predicts the current observation; latent width = observation size.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::dccp::{AgentTopology, DccpCache, DccpParams};
use crate::error::{config_err, Result};
use crate::nn::{Mlp, MlpCache, ParameterBlock, Parameterized};

/// Encoder followed by a communication layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorNet {
    obs_size: usize,
    num_actions: usize,
    encoder: Mlp,
    comm: DccpParams,
}

#[derive(Debug, Clone)]
pub struct PredictorCache {
    encoder: MlpCache,
    comm: DccpCache,
}

#[derive(Debug, Clone, Copy)]
pub struct PredictorDims {
    pub obs_size: usize,
    pub num_actions: usize,
    pub output: usize,
    pub hidden: usize,
    pub kernels: usize,
    pub kernel_size: usize,
    pub num_agents: usize,
}

impl PredictorNet {
    pub fn new<R: Rng + ?Sized>(name: &str, dims: PredictorDims, rng: &mut R) -> Result<Self> {
        let sizes = Self::encoder_sizes(&dims);
        let encoder = Mlp::new(&format!("{name}.encoder"), &sizes, rng)?;
        let comm = DccpParams::new(
            &format!("{name}.comm"),
            dims.output,
            dims.kernels,
            dims.kernel_size,
            dims.num_agents,
            rng,
        )?;
        Ok(Self {
            obs_size: dims.obs_size,
            num_actions: dims.num_actions,
            encoder,
            comm,
        })
    }

    fn encoder_sizes(dims: &PredictorDims) -> [usize; 3] {
        [dims.obs_size + dims.num_actions, dims.hidden, dims.output]
    }

    pub fn param_count(dims: &PredictorDims) -> usize {
        Mlp::param_count(&Self::encoder_sizes(dims))
            + DccpParams::param_count(dims.output, dims.kernels, dims.kernel_size, dims.num_agents)
    }

    pub fn output_dim(&self) -> usize {
        self.comm.channels()
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp {
        &mut self.encoder
    }

    pub fn comm(&self) -> &DccpParams {
        &self.comm
    }

    pub fn comm_mut(&mut self) -> &mut DccpParams {
        &mut self.comm
    }

    fn encoder_input(&self, prev_obs: ArrayView2<f64>, prev_q: ArrayView2<f64>) -> Result<Array2<f64>> {
        if prev_obs.ncols() != self.obs_size || prev_q.ncols() != self.num_actions {
            return Err(config_err(format!(
                "predictor expects observation width {} and Q width {}, got {} and {}",
                self.obs_size,
                self.num_actions,
                prev_obs.ncols(),
                prev_q.ncols()
            )));
        }
        if prev_obs.nrows() != prev_q.nrows() {
            return Err(config_err("observation and Q-value row counts differ"));
        }
        Ok(concatenate(Axis(1), &[prev_obs, prev_q]).expect("matching rows"))
    }

    /// Rows are `B * N` (timestep-major, agent-minor).
    pub fn forward(
        &self,
        topology: &AgentTopology,
        prev_obs: ArrayView2<f64>,
        prev_q: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, PredictorCache)> {
        let input = self.encoder_input(prev_obs, prev_q)?;
        let (latent, encoder) = self.encoder.forward(input.view())?;
        let (out, comm) = self.comm.forward(topology, latent.view())?;
        Ok((out, PredictorCache { encoder, comm }))
    }

    pub fn infer(
        &self,
        topology: &AgentTopology,
        prev_obs: ArrayView2<f64>,
        prev_q: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let input = self.encoder_input(prev_obs, prev_q)?;
        let latent = self.encoder.infer(input.view())?;
        self.comm.infer(topology, latent.view())
    }

    pub fn backward(&mut self, cache: &PredictorCache, d_out: ArrayView2<f64>) -> Result<()> {
        let d_latent = self.comm.backward(&cache.comm, d_out)?;
        self.encoder.backward(&cache.encoder, d_latent.view())?;
        Ok(())
    }

    /// Forward, squared-error loss against `target` scaled by `scale`, and
    /// backward of the scaled loss. Returns the unscaled loss.
    pub fn loss_and_backward(
        &mut self,
        topology: &AgentTopology,
        prev_obs: ArrayView2<f64>,
        prev_q: ArrayView2<f64>,
        target: ArrayView2<f64>,
        scale: f64,
    ) -> Result<f64> {
        let (pred, cache) = self.forward(topology, prev_obs, prev_q)?;
        let loss = squared_error_loss(pred.view(), target)?;
        let grad = (&pred - &target) * (2.0 * scale);
        self.backward(&cache, grad.view())?;
        Ok(loss)
    }
}

impl Parameterized for PredictorNet {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        let mut b = self.encoder.blocks();
        b.extend(self.comm.blocks());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut b = self.encoder.blocks_mut();
        b.extend(self.comm.blocks_mut());
        b
    }
}

/// `sum over rows of ||prediction - target||^2`.
pub fn squared_error_loss(prediction: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if prediction.dim() != target.dim() {
        return Err(config_err(format!(
            "prediction shape {:?} differs from target shape {:?}",
            prediction.dim(),
            target.dim()
        )));
    }
    Ok(prediction
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (t - p) * (t - p))
        .sum())
}

macro_rules! predictor_newtype {
    ($(#[$meta:meta])* $name:ident, $label:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(PredictorNet);

        impl $name {
            pub fn from_net(net: PredictorNet) -> Self {
                Self(net)
            }

            pub fn net(&self) -> &PredictorNet {
                &self.0
            }

            pub fn net_mut(&mut self) -> &mut PredictorNet {
                &mut self.0
            }

            pub fn forward(
                &self,
                topology: &AgentTopology,
                prev_obs: ArrayView2<f64>,
                prev_q: ArrayView2<f64>,
            ) -> Result<(Array2<f64>, PredictorCache)> {
                self.0.forward(topology, prev_obs, prev_q)
            }

            pub fn infer(
                &self,
                topology: &AgentTopology,
                prev_obs: ArrayView2<f64>,
                prev_q: ArrayView2<f64>,
            ) -> Result<Array2<f64>> {
                self.0.infer(topology, prev_obs, prev_q)
            }

            pub fn backward(&mut self, cache: &PredictorCache, d_out: ArrayView2<f64>) -> Result<()> {
                self.0.backward(cache, d_out)
            }

            pub fn loss_and_backward(
                &mut self,
                topology: &AgentTopology,
                prev_obs: ArrayView2<f64>,
                prev_q: ArrayView2<f64>,
                target: ArrayView2<f64>,
                scale: f64,
            ) -> Result<f64> {
                self.0.loss_and_backward(topology, prev_obs, prev_q, target, scale)
            }

            pub const LABEL: &'static str = $label;
        }

        impl Parameterized for $name {
            fn blocks(&self) -> Vec<&ParameterBlock> {
                self.0.blocks()
            }

            fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
                self.0.blocks_mut()
            }
        }
    };
}

predictor_newtype!(
    /// Predicts each agent's current Q-values from the previous step.
    PrnNet,
    "prn"
);

predictor_newtype!(
    /// Predicts each agent's current observation from the previous step.
    OpnNet,
    "opn"
);

impl PrnNet {
    pub fn new<R: Rng + ?Sized>(
        obs_size: usize,
        num_actions: usize,
        hidden: usize,
        kernels: usize,
        kernel_size: usize,
        num_agents: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = PredictorDims {
            obs_size,
            num_actions,
            output: num_actions,
            hidden,
            kernels,
            kernel_size,
            num_agents,
        };
        Ok(Self(PredictorNet::new(Self::LABEL, dims, rng)?))
    }
}

impl OpnNet {
    pub fn new<R: Rng + ?Sized>(
        obs_size: usize,
        num_actions: usize,
        hidden: usize,
        kernels: usize,
        kernel_size: usize,
        num_agents: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = PredictorDims {
            obs_size,
            num_actions,
            output: obs_size,
            hidden,
            kernels,
            kernel_size,
            num_agents,
        };
        Ok(Self(PredictorNet::new(Self::LABEL, dims, rng)?))
    }
}

/// Q-value prediction loss for one timestep: sum over agents.
pub fn prn_loss(predicted_q: ArrayView2<f64>, recorded_q: ArrayView2<f64>) -> Result<f64> {
    squared_error_loss(predicted_q, recorded_q)
}

/// Observation prediction loss for one timestep: sum over agents.
pub fn opn_loss(predicted_obs: ArrayView2<f64>, observed: ArrayView2<f64>) -> Result<f64> {
    squared_error_loss(predicted_obs, observed)
}
