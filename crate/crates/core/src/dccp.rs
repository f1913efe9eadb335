//! Depthwise-convolution communication.
//!
//! Every agent sits on a cell of a grid. For channel `m` the agents' scalar
//! inputs form a 2-D field (empty cells and the outside of the grid read as
//! zero). `K` kernels of size `n x n` per channel, shared by all agents, are
//! correlated with the `n x n` patch centred on agent `i`, producing a
//! `K`-vector `u`. Agent `i` mixes `u` with its own weight row `w[i, m, :]`,
//! so output channel `m` depends only on input channel `m`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::nn::{ParameterBlock, Parameterized};

/// Agent placement on a grid plus the derived neighbor sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTopology {
    height: usize,
    width: usize,
    patch: usize,
    positions: Vec<(usize, usize)>,
    cells: Vec<Option<usize>>,
    neighbors: Vec<Vec<usize>>,
}

impl AgentTopology {
    /// One agent per cell, indexed row-major.
    pub fn full_grid(height: usize, width: usize, patch: usize) -> Result<Self> {
        let positions = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .collect();
        Self::from_positions(height, width, positions, patch)
    }

    pub fn from_positions(
        height: usize,
        width: usize,
        positions: Vec<(usize, usize)>,
        patch: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(config_err("grid dimensions must be positive"));
        }
        if patch == 0 || patch % 2 == 0 {
            return Err(config_err(format!("neighborhood patch size must be odd, got {patch}")));
        }
        if positions.is_empty() {
            return Err(config_err("topology needs at least one agent"));
        }
        let mut cells = vec![None; height * width];
        for (i, &(r, c)) in positions.iter().enumerate() {
            if r >= height || c >= width {
                return Err(config_err(format!("agent {i} at ({r}, {c}) is outside the grid")));
            }
            if let Some(other) = cells[r * width + c] {
                return Err(config_err(format!("agents {other} and {i} share cell ({r}, {c})")));
            }
            cells[r * width + c] = Some(i);
        }
        let half = (patch / 2) as isize;
        let neighbors = positions
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let mut n = Vec::new();
                for dr in -half..=half {
                    for dc in -half..=half {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        if rr < 0 || cc < 0 || rr >= height as isize || cc >= width as isize {
                            continue;
                        }
                        if let Some(j) = cells[rr as usize * width + cc as usize] {
                            if j != i {
                                n.push(j);
                            }
                        }
                    }
                }
                n
            })
            .collect();
        Ok(Self {
            height,
            width,
            patch,
            positions,
            cells,
            neighbors,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn position(&self, agent: usize) -> (usize, usize) {
        self.positions[agent]
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    /// Neighbors of `agent`, in row-major order of their cells.
    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn agent_at(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.cells[row * self.width + col]
    }

    /// For each agent, the occupant (if any) of every cell of the
    /// `n x n` patch centred on it, in row-major patch order.
    fn patch_table(&self, n: usize) -> Vec<Option<usize>> {
        let half = (n / 2) as isize;
        let mut table = Vec::with_capacity(self.num_agents() * n * n);
        for &(r, c) in &self.positions {
            for dr in -half..=half {
                for dc in -half..=half {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    let occupant = if rr < 0 || cc < 0 {
                        None
                    } else {
                        self.agent_at(rr as usize, cc as usize)
                    };
                    table.push(occupant);
                }
            }
        }
        table
    }
}

/// Shared per-channel kernels and agent-specific mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DccpParams {
    channels: usize,
    kernels_per_channel: usize,
    kernel_size: usize,
    num_agents: usize,
    /// `[M, K, n, n]`
    kernels: ParameterBlock,
    /// `[N, M, K]`
    agent_weights: ParameterBlock,
}

#[derive(Debug, Clone)]
pub struct DccpCache {
    inputs: Array2<f64>,
    /// Per row and channel, the `K` kernel responses.
    responses: Vec<f64>,
    patches: Vec<Option<usize>>,
}

impl DccpParams {
    /// Kernels uniform in `[-1/n, 1/n]`, mixing weights `1/K`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        kernels_per_channel: usize,
        kernel_size: usize,
        num_agents: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_dims(channels, kernels_per_channel, kernel_size, num_agents)?;
        let bound = 1.0 / kernel_size as f64;
        let kernels = ParameterBlock::uniform(
            format!("{name}.kernels"),
            &[channels, kernels_per_channel, kernel_size, kernel_size],
            bound,
            rng,
        );
        let agent_weights = ParameterBlock::filled(
            format!("{name}.agent_weights"),
            &[num_agents, channels, kernels_per_channel],
            1.0 / kernels_per_channel as f64,
        );
        Ok(Self {
            channels,
            kernels_per_channel,
            kernel_size,
            num_agents,
            kernels,
            agent_weights,
        })
    }

    pub fn from_blocks(kernels: ParameterBlock, agent_weights: ParameterBlock) -> Result<Self> {
        let ks = kernels.shape();
        let ws = agent_weights.shape();
        if ks.len() != 4 || ws.len() != 3 || ks[2] != ks[3] || ws[1] != ks[0] || ws[2] != ks[1] {
            return Err(config_err(format!(
                "incompatible dccp blocks: kernels {ks:?}, agent weights {ws:?}"
            )));
        }
        Self::check_dims(ks[0], ks[1], ks[2], ws[0])?;
        Ok(Self {
            channels: ks[0],
            kernels_per_channel: ks[1],
            kernel_size: ks[2],
            num_agents: ws[0],
            kernels,
            agent_weights,
        })
    }

    fn check_dims(m: usize, k: usize, n: usize, agents: usize) -> Result<()> {
        if m == 0 || k == 0 || agents == 0 {
            return Err(config_err("dccp channels, kernels and agents must be positive"));
        }
        if n == 0 || n % 2 == 0 {
            return Err(config_err(format!("dccp kernel size must be odd, got {n}")));
        }
        Ok(())
    }

    /// `M*K*n*n + N*M*K`
    pub fn param_count(channels: usize, kernels: usize, kernel_size: usize, agents: usize) -> usize {
        channels * kernels * kernel_size * kernel_size + agents * channels * kernels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernels_per_channel(&self) -> usize {
        self.kernels_per_channel
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn kernels(&self) -> &ParameterBlock {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut ParameterBlock {
        &mut self.kernels
    }

    pub fn agent_weights(&self) -> &ParameterBlock {
        &self.agent_weights
    }

    pub fn agent_weights_mut(&mut self) -> &mut ParameterBlock {
        &mut self.agent_weights
    }

    #[inline]
    fn kernel_offset(&self, m: usize, k: usize) -> usize {
        (m * self.kernels_per_channel + k) * self.kernel_size * self.kernel_size
    }

    #[inline]
    fn weight_offset(&self, agent: usize, m: usize) -> usize {
        (agent * self.channels + m) * self.kernels_per_channel
    }

    fn check_inputs(&self, topology: &AgentTopology, inputs: &ArrayView2<f64>) -> Result<usize> {
        if topology.num_agents() != self.num_agents {
            return Err(config_err(format!(
                "dccp built for {} agents, topology has {}",
                self.num_agents,
                topology.num_agents()
            )));
        }
        if inputs.ncols() != self.channels {
            return Err(config_err(format!(
                "dccp expects {} channels per agent, got {}",
                self.channels,
                inputs.ncols()
            )));
        }
        if inputs.nrows() % self.num_agents != 0 {
            return Err(config_err(format!(
                "dccp input rows ({}) are not a multiple of the agent count ({})",
                inputs.nrows(),
                self.num_agents
            )));
        }
        Ok(inputs.nrows() / self.num_agents)
    }

    fn run(
        &self,
        patches: &[Option<usize>],
        inputs: &ArrayView2<f64>,
        mut responses: Option<&mut Vec<f64>>,
    ) -> Array2<f64> {
        let (n_agents, m_ch, k_n) = (self.num_agents, self.channels, self.kernels_per_channel);
        let area = self.kernel_size * self.kernel_size;
        let batch = inputs.nrows() / n_agents;
        let kernels = self.kernels.values();
        let weights = self.agent_weights.values();
        let occupied = occupied_cells(patches, n_agents, area);
        let x = inputs.as_standard_layout();
        let x = x.as_slice().unwrap_or_default();
        let mut out = vec![0.0; inputs.nrows() * m_ch];
        for b in 0..batch {
            let base = b * n_agents;
            for (i, cells) in occupied.iter().enumerate() {
                let row = base + i;
                for m in 0..m_ch {
                    let w = &weights[self.weight_offset(i, m)..][..k_n];
                    let mut z = 0.0;
                    for k in 0..k_n {
                        let kern = &kernels[self.kernel_offset(m, k)..][..area];
                        let mut u = 0.0;
                        for &(p, j) in cells {
                            u += kern[p] * x[(base + j) * m_ch + m];
                        }
                        if let Some(r) = responses.as_deref_mut() {
                            r[(row * m_ch + m) * k_n + k] = u;
                        }
                        z += u * w[k];
                    }
                    out[row * m_ch + m] = z;
                }
            }
        }
        Array2::from_shape_vec(inputs.dim(), out).unwrap_or_else(|_| Array2::zeros(inputs.dim()))
    }

    /// Batched forward. `inputs` has `B * N` rows (timestep-major, agent-minor)
    /// and `M` columns; the output has the same shape.
    pub fn forward(&self, topology: &AgentTopology, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, DccpCache)> {
        self.check_inputs(topology, &inputs)?;
        let patches = topology.patch_table(self.kernel_size);
        let mut responses = vec![0.0; inputs.nrows() * self.channels * self.kernels_per_channel];
        let out = self.run(&patches, &inputs, Some(&mut responses));
        Ok((
            out,
            DccpCache {
                inputs: inputs.to_owned(),
                responses,
                patches,
            },
        ))
    }

    pub fn infer(&self, topology: &AgentTopology, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(topology, &inputs)?;
        let patches = topology.patch_table(self.kernel_size);
        Ok(self.run(&patches, &inputs, None))
    }

    /// Accumulates kernel grads (summed over all agents) and each agent's
    /// weight-row grads; returns the input cotangents.
    pub fn backward(&mut self, cache: &DccpCache, dz: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n_agents, m_ch, k_n) = (self.num_agents, self.channels, self.kernels_per_channel);
        let area = self.kernel_size * self.kernel_size;
        if cache.inputs.ncols() != m_ch || cache.patches.len() != n_agents * area {
            return Err(Error::Usage("dccp cache does not belong to these parameters".into()));
        }
        if dz.dim() != cache.inputs.dim() {
            return Err(config_err(format!(
                "dccp backward expects cotangent {:?}, got {:?}",
                cache.inputs.dim(),
                dz.dim()
            )));
        }
        let batch = cache.inputs.nrows() / n_agents;
        let occupied = occupied_cells(&cache.patches, n_agents, area);
        let x = cache.inputs.as_standard_layout();
        let x = x.as_slice().unwrap_or_default();
        let mut dx = vec![0.0; cache.inputs.nrows() * m_ch];
        let mut du = vec![0.0; k_n];
        let (kv, kg) = self.kernels.split_mut();
        let (wv, wg) = self.agent_weights.split_mut();
        for b in 0..batch {
            let base = b * n_agents;
            for (i, cells) in occupied.iter().enumerate() {
                let row = base + i;
                for m in 0..m_ch {
                    let g = dz[[row, m]];
                    if g == 0.0 {
                        continue;
                    }
                    let w_off = (i * m_ch + m) * k_n;
                    let resp = &cache.responses[(row * m_ch + m) * k_n..][..k_n];
                    for k in 0..k_n {
                        wg[w_off + k] += g * resp[k];
                        du[k] = g * wv[w_off + k];
                    }
                    for (k, &d) in du.iter().enumerate() {
                        let k_off = (m * k_n + k) * area;
                        for &(p, j) in cells {
                            let at = (base + j) * m_ch + m;
                            kg[k_off + p] += d * x[at];
                            dx[at] += d * kv[k_off + p];
                        }
                    }
                }
            }
        }
        let dx = Array2::from_shape_vec(cache.inputs.dim(), dx).unwrap_or_else(|_| Array2::zeros(cache.inputs.dim()));
        Ok(dx)
    }
}

impl Parameterized for DccpParams {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        vec![&self.kernels, &self.agent_weights]
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![&mut self.kernels, &mut self.agent_weights]
    }
}

/// Per agent, the `(patch position, occupant)` pairs of its non-empty cells.
fn occupied_cells(patches: &[Option<usize>], n_agents: usize, area: usize) -> Vec<Vec<(usize, usize)>> {
    (0..n_agents)
        .map(|i| {
            patches[i * area..(i + 1) * area]
                .iter()
                .enumerate()
                .filter_map(|(p, o)| o.map(|j| (p, j)))
                .collect()
        })
        .collect()
}

/// Elementwise mean of each agent's neighbors' rows; isolated agents get the
/// zero vector. Shapes as for [`DccpParams::forward`].
pub fn neighbor_mean(topology: &AgentTopology, values: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = topology.num_agents();
    if values.nrows() % n != 0 {
        return Err(config_err("row count is not a multiple of the agent count"));
    }
    let mut out = Array2::zeros(values.dim());
    for b in 0..values.nrows() / n {
        for i in 0..n {
            let neigh = topology.neighbors(i);
            if neigh.is_empty() {
                continue;
            }
            let inv = 1.0 / neigh.len() as f64;
            for &j in neigh {
                for c in 0..values.ncols() {
                    out[[b * n + i, c]] += values[[b * n + j, c]] * inv;
                }
            }
        }
    }
    Ok(out)
}
