//! Dense layers: `y = act(W x + b)` applied row-wise to a batch.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ParameterBlock, Parameterized};
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Forward cache: the layer input and the pre-activation.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weight: ParameterBlock,
    bias: ParameterBlock,
    activation: Activation,
}

impl DenseLayer {
    /// Weights and biases uniform in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(config_err(format!("layer `{name}` dims must be > 0")));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = ParameterBlock::uniform(format!("{name}.weight"), &[out_dim, in_dim], bound, rng);
        let bias = ParameterBlock::uniform(format!("{name}.bias"), &[out_dim], bound, rng);
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn from_parts(weight: ParameterBlock, bias: ParameterBlock, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(config_err(format!(
                "dense layer shapes incompatible: weight {:?}, bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &ParameterBlock {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut ParameterBlock {
        &mut self.weight
    }

    pub fn bias(&self) -> &ParameterBlock {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut ParameterBlock {
        &mut self.bias
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(config_err(format!(
                "layer `{}` expects input width {}, got {}",
                self.weight.name(),
                self.in_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut pre = x.dot(&self.weight.matrix().t());
        let bias = ndarray::ArrayView1::from(self.bias.values());
        pre += &bias;
        pre
    }

    /// Batched forward. Each row of `x` is one sample.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        self.check_input(&x)?;
        let pre = self.pre_activation(&x);
        let act = self.activation;
        let y = pre.mapv(|z| act.apply(z));
        Ok((
            y,
            DenseCache {
                input: x.to_owned(),
                pre,
            },
        ))
    }

    /// Forward without retaining a cache.
    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let act = self.activation;
        let mut pre = self.pre_activation(&x);
        pre.mapv_inplace(|z| act.apply(z));
        Ok(pre)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let (y, cache) = self.forward(view)?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    /// Accumulates `dL/dW`, `dL/db` into the grads and returns `dL/dx`.
    pub fn backward(&mut self, cache: &DenseCache, dy: ArrayView2<f64>) -> Result<Array2<f64>> {
        if cache.input.ncols() != self.in_dim() || cache.pre.ncols() != self.out_dim() {
            return Err(Error::Usage(format!(
                "cache does not belong to layer `{}`",
                self.weight.name()
            )));
        }
        if dy.dim() != cache.pre.dim() {
            return Err(config_err(format!(
                "layer `{}` backward expects cotangent {:?}, got {:?}",
                self.weight.name(),
                cache.pre.dim(),
                dy.dim()
            )));
        }
        let act = self.activation;
        let mut dpre = dy.to_owned();
        ndarray::Zip::from(&mut dpre)
            .and(&cache.pre)
            .for_each(|d, &z| *d *= act.derivative(z));

        let dw = dpre.t().dot(&cache.input);
        self.weight.grad_matrix_mut().zip_mut_with(&dw, |g, &d| *g += d);
        let db = dpre.sum_axis(Axis(0));
        for (g, d) in self.bias.grads_mut().iter_mut().zip(db.iter()) {
            *g += d;
        }
        Ok(dpre.dot(&self.weight.matrix()))
    }
}

impl Parameterized for DenseLayer {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        vec![&self.weight, &self.bias]
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// A stack of dense layers: ReLU on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    layers: Vec<DenseCache>,
}

impl Mlp {
    /// `sizes` lists every width from input to output, e.g. `[29, 64, 64, 5]`.
    pub fn new<R: Rng + ?Sized>(name: &str, sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(config_err(format!("mlp `{name}` needs at least input and output sizes")));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::new(&format!("{name}.{i}"), w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(config_err("mlp needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(config_err("adjacent layer widths do not match"));
            }
        }
        Ok(Self { layers })
    }

    /// Closed-form parameter count for a stack with the given widths.
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut h, c) = self.layers[0].forward(x)?;
        caches.push(c);
        for layer in &self.layers[1..] {
            let (next, c) = layer.forward(h.view())?;
            caches.push(c);
            h = next;
        }
        Ok((h, MlpCache { layers: caches }))
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = self.layers[0].infer(x)?;
        for layer in &self.layers[1..] {
            h = layer.infer(h.view())?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: ArrayView2<f64>) -> Result<Array2<f64>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Usage(
                "mlp backward called without a matching forward cache".into(),
            ));
        }
        let mut grad = dy.to_owned();
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            grad = layer.backward(c, grad.view())?;
        }
        Ok(grad)
    }
}

impl Parameterized for Mlp {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        self.layers.iter().flat_map(|l| l.blocks()).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        self.layers.iter_mut().flat_map(|l| l.blocks_mut()).collect()
    }
}
