//! Training loop: ε-greedy rollouts into a joint replay buffer, the three
//! disjoint updates (VFN from the Bellman loss, PRN and OPN from their
//! regression losses) and periodic target sync.

mod nets;
mod replay;

use std::collections::BTreeMap;

use log::warn;
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dccp::AgentTopology;
use crate::envs::{Environment, StepOutcome};
use crate::error::{config_err, Result};
use crate::nn::{OptimizerKind, OptimizerState};
use crate::predictors::squared_error_loss;
use crate::vfn::{greedy_action, AgentVariant, VfnInputs, VfnNet};

pub use nets::{neighbor_mean_actions, AgentNets, NetSizes, Predictions};
pub use replay::{Batch, JointTransition, ReplayBuffer};

/// Linear decay from `start` to `end` over the first `decay_fraction` of
/// training, then flat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.2,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64, total_steps: u64) -> f64 {
        let decay = (self.decay_fraction * total_steps as f64).round();
        if decay <= 0.0 || step as f64 >= decay {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / decay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub epsilon: EpsilonSchedule,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda_prn: f64,
    pub lambda_opn: f64,
    /// Target sync period in environment steps.
    pub target_period: u64,
    /// Batch size in joint timesteps.
    pub batch_size: usize,
    /// Replay capacity in joint timesteps.
    pub capacity: usize,
    /// Environment steps per gradient update.
    pub train_every: u64,
    /// Minimum stored timesteps before updates start (at least `batch_size`).
    pub learning_starts: usize,
    /// Multiplies rewards before they are stored.
    pub reward_scale: f64,
    /// Multiplies observations before any network sees them.
    pub obs_scale: f64,
    pub max_grad_norm: Option<f64>,
    pub optimizer: OptimizerKind,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            epsilon: EpsilonSchedule::default(),
            learning_rate: 1e-3,
            gamma: 0.99,
            lambda_prn: 1.0,
            lambda_opn: 1.0,
            target_period: 200,
            batch_size: 32,
            capacity: 5000,
            train_every: 1,
            learning_starts: 0,
            reward_scale: 1.0,
            obs_scale: 1.0,
            max_grad_norm: None,
            optimizer: OptimizerKind::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let e = &self.epsilon;
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(in_unit(e.start) && in_unit(e.end) && in_unit(e.decay_fraction)) {
            return Err(config_err("epsilon schedule values must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(config_err(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(config_err("learning rate must be finite and non-negative"));
        }
        if !(self.lambda_prn >= 0.0 && self.lambda_opn >= 0.0 && self.lambda_prn.is_finite() && self.lambda_opn.is_finite()) {
            return Err(config_err("loss coefficients must be finite and non-negative"));
        }
        if self.target_period == 0 || self.train_every == 0 {
            return Err(config_err("target period and train_every must be at least 1"));
        }
        if self.batch_size == 0 || self.capacity < self.batch_size {
            return Err(config_err("batch size must be positive and no larger than the replay capacity"));
        }
        if !(self.reward_scale.is_finite() && self.obs_scale.is_finite()) {
            return Err(config_err("scales must be finite"));
        }
        if self.max_grad_norm.is_some_and(|g| !(g > 0.0)) {
            return Err(config_err("max_grad_norm must be positive"));
        }
        Ok(())
    }

    fn optimizer(&self) -> OptimizerState {
        OptimizerState::new(self.optimizer, self.learning_rate).with_max_grad_norm(self.max_grad_norm)
    }
}

/// `r` if terminal, else `r + γ max q_next`.
pub fn bellman_target(reward: f64, q_next: &[f64], terminal: bool, gamma: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * q_next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Losses of one update, each averaged over the batch's timesteps and summed
/// over agents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub vfn: f64,
    pub prn: f64,
    pub opn: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Optimizers {
    pub vfn: OptimizerState,
    pub prn: OptimizerState,
    pub opn: OptimizerState,
}

impl Optimizers {
    pub fn new(hp: &HyperParams) -> Self {
        Self {
            vfn: hp.optimizer(),
            prn: hp.optimizer(),
            opn: hp.optimizer(),
        }
    }
}

/// Previous-step data fed to the predictors; zeros at episode start.
#[derive(Debug, Clone, PartialEq)]
pub struct Carry {
    pub prev_obs: Array2<f64>,
    pub prev_q: Array2<f64>,
    pub prev_actions: Option<Vec<usize>>,
}

impl Carry {
    pub fn zeros(num_agents: usize, obs_size: usize, num_actions: usize) -> Self {
        Self {
            prev_obs: Array2::zeros((num_agents, obs_size)),
            prev_q: Array2::zeros((num_agents, num_actions)),
            prev_actions: None,
        }
    }
}

/// Per-agent ε-greedy choice over the rows of `q`.
pub fn select_actions<R: Rng + ?Sized>(q: ArrayView2<f64>, epsilon: f64, rng: &mut R) -> Result<Vec<usize>> {
    let a = q.ncols();
    q.rows()
        .into_iter()
        .map(|row| {
            if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                Ok(rng.random_range(0..a))
            } else {
                greedy_action(&row.to_vec(), None)
            }
        })
        .collect()
}

pub fn greedy_actions(q: ArrayView2<f64>) -> Result<Vec<usize>> {
    q.rows()
        .into_iter()
        .map(|row| greedy_action(&row.to_vec(), None))
        .collect()
}

/// What a rollout step produced.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub transition: JointTransition,
    /// Raw environment output (observations unscaled).
    pub outcome: StepOutcome,
    /// Scaled next observations.
    pub next_obs: Array2<f64>,
    pub carry: Carry,
}

/// One environment step under the current networks. `obs` is the scaled
/// current observation and `t` the step index within the episode.
#[allow(clippy::too_many_arguments)]
pub fn rollout_step<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    nets: &AgentNets,
    obs: ArrayView2<f64>,
    carry: &Carry,
    t: usize,
    epsilon: f64,
    hp: &HyperParams,
    rng: &mut R,
) -> Result<RolloutStep> {
    let topo = nets.topology();
    let a = nets.num_actions();
    let prev_mean = neighbor_mean_actions(topo, carry.prev_actions.as_deref(), a)?;
    let q = nets.q_values(obs, carry.prev_obs.view(), carry.prev_q.view(), prev_mean.view())?;
    let actions = select_actions(q.view(), epsilon, rng)?;
    let outcome = env.step(&actions)?;
    let next_obs = &outcome.observations * hp.obs_scale;
    let mean_actions = neighbor_mean_actions(topo, Some(&actions), a)?;
    let transition = JointTransition {
        t,
        prev_obs: carry.prev_obs.clone(),
        prev_q: carry.prev_q.clone(),
        obs: obs.to_owned(),
        actions: actions.clone(),
        rewards: outcome.rewards.iter().map(|r| r * hp.reward_scale).collect(),
        q: q.clone(),
        next_obs: next_obs.clone(),
        prev_mean_actions: prev_mean,
        mean_actions,
        terminal: outcome.done && !env.bootstrap_at_horizon(),
    };
    let carry = Carry {
        prev_obs: obs.to_owned(),
        prev_q: q,
        prev_actions: Some(actions),
    };
    Ok(RolloutStep {
        transition,
        outcome,
        next_obs,
        carry,
    })
}

/// Bellman targets for every row of a batch.
pub fn bellman_targets(
    target: &VfnNet,
    topology: &AgentTopology,
    next_inputs: VfnInputs<'_>,
    rewards: &Array1<f64>,
    terminal: &[bool],
    gamma: f64,
) -> Result<Vec<f64>> {
    let q_next = target.infer(topology, next_inputs)?;
    Ok(q_next
        .rows()
        .into_iter()
        .enumerate()
        .map(|(r, row)| bellman_target(rewards[r], &row.to_vec(), terminal[r], gamma))
        .collect())
}

/// Squared TD error at the taken actions, averaged over `timesteps` and
/// summed over agents; accumulates gradients into `vfn`.
pub fn bellman_loss_backward(
    vfn: &mut VfnNet,
    topology: &AgentTopology,
    inputs: VfnInputs<'_>,
    actions: &[usize],
    targets: &[f64],
    timesteps: usize,
) -> Result<f64> {
    let (q, cache) = vfn.forward(topology, inputs)?;
    if actions.len() != q.nrows() || targets.len() != q.nrows() {
        return Err(config_err("actions and targets must have one entry per row"));
    }
    let inv = 1.0 / timesteps as f64;
    let mut dq = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for (r, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let err = q[[r, a]] - y;
        loss += err * err;
        dq[[r, a]] = 2.0 * err * inv;
    }
    vfn.backward(&cache, dq.view())?;
    Ok(loss * inv)
}

/// VFN loss on a batch; touches only the online VFN's gradients.
pub fn vfn_loss_backward(nets: &mut AgentNets, batch: &Batch, gamma: f64) -> Result<f64> {
    let topo = nets.topology().clone();
    let pred_t = nets.predict(batch.prev_obs.view(), batch.prev_q.view())?;
    let pred_next = nets.predict(batch.obs.view(), batch.q.view())?;
    let targets = bellman_targets(
        &nets.target,
        &topo,
        nets.inputs(batch.next_obs.view(), &pred_next, batch.mean_actions.view()),
        &batch.rewards,
        &batch.terminal,
        gamma,
    )?;
    let inputs = nets.inputs(batch.obs.view(), &pred_t, batch.prev_mean_actions.view());
    bellman_loss_backward(&mut nets.vfn, &topo, inputs, &batch.actions, &targets, batch.timesteps)
}

/// PRN regression loss against the recorded Q-values. Gradients are
/// accumulated with weight `scale` only when `scale > 0`.
pub fn prn_loss_backward(nets: &mut AgentNets, batch: &Batch, scale: f64) -> Result<f64> {
    let topo = nets.topology().clone();
    let inv = 1.0 / batch.timesteps as f64;
    let Some(prn) = nets.prn.as_mut() else {
        return Ok(0.0);
    };
    let loss = if scale > 0.0 {
        prn.loss_and_backward(&topo, batch.prev_obs.view(), batch.prev_q.view(), batch.q.view(), scale * inv)?
    } else {
        let pred = prn.infer(&topo, batch.prev_obs.view(), batch.prev_q.view())?;
        squared_error_loss(pred.view(), batch.q.view())?
    };
    Ok(loss * inv)
}

/// OPN regression loss against the observed `o_t`.
pub fn opn_loss_backward(nets: &mut AgentNets, batch: &Batch, scale: f64) -> Result<f64> {
    let topo = nets.topology().clone();
    let inv = 1.0 / batch.timesteps as f64;
    let Some(opn) = nets.opn.as_mut() else {
        return Ok(0.0);
    };
    let loss = if scale > 0.0 {
        opn.loss_and_backward(&topo, batch.prev_obs.view(), batch.prev_q.view(), batch.obs.view(), scale * inv)?
    } else {
        let pred = opn.infer(&topo, batch.prev_obs.view(), batch.prev_q.view())?;
        squared_error_loss(pred.view(), batch.obs.view())?
    };
    Ok(loss * inv)
}

/// One update on a given batch: the three losses are computed from the
/// pre-update parameters, then each group takes its own optimizer step. A
/// zero coefficient skips that group's step entirely.
pub fn update_on_batch(nets: &mut AgentNets, opts: &mut Optimizers, hp: &HyperParams, batch: &Batch) -> Result<LossReport> {
    let vfn = vfn_loss_backward(nets, batch, hp.gamma)?;
    let prn = prn_loss_backward(nets, batch, hp.lambda_prn)?;
    let opn = opn_loss_backward(nets, batch, hp.lambda_opn)?;
    opts.vfn.step(&mut nets.vfn)?;
    if hp.lambda_prn > 0.0 {
        if let Some(p) = nets.prn.as_mut() {
            opts.prn.step(p)?;
        }
    }
    if hp.lambda_opn > 0.0 {
        if let Some(p) = nets.opn.as_mut() {
            opts.opn.step(p)?;
        }
    }
    Ok(LossReport {
        vfn,
        prn,
        opn,
        total: vfn + hp.lambda_prn * prn + hp.lambda_opn * opn,
    })
}

/// Samples a minibatch and updates. Returns `None` (with a warning) when the
/// buffer holds fewer than `batch_size` timesteps.
pub fn train_step<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    nets: &mut AgentNets,
    opts: &mut Optimizers,
    hp: &HyperParams,
    rng: &mut R,
) -> Result<Option<LossReport>> {
    if buffer.len() < hp.batch_size {
        warn!(
            "replay holds {} timesteps, batch needs {}; skipping update",
            buffer.len(),
            hp.batch_size
        );
        return Ok(None);
    }
    let batch = buffer.batch(&buffer.sample_indices(hp.batch_size, rng))?;
    update_on_batch(nets, opts, hp, &batch).map(Some)
}

/// Copies online into target when `step` is a multiple of `period`.
pub fn sync_target(nets: &mut AgentNets, step: u64, period: u64) -> Result<bool> {
    if period == 0 {
        return Err(config_err("target period must be at least 1"));
    }
    if step % period == 0 {
        nets.sync_target()?;
        return Ok(true);
    }
    Ok(false)
}

/// Seed used for the `episode`-th evaluation episode. Shared by every run so
/// variants are compared on the same traffic and bit draws.
pub fn evaluation_seed(episode: usize) -> u64 {
    1_000_000 + episode as u64
}

/// One agent's step in a recorded greedy episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub agent: usize,
    pub action: usize,
    pub reward: f64,
    /// Vehicles queued at the agent after the step; `None` for environments
    /// without queues.
    pub queue_total: Option<f64>,
}

/// Runs one greedy episode from `env.reset(seed)`, calling `on_step` after
/// every environment step.
fn greedy_episode(
    nets: &AgentNets,
    env: &mut dyn Environment,
    seed: u64,
    obs_scale: f64,
    mut on_step: impl FnMut(&dyn Environment, &[usize], &StepOutcome),
) -> Result<()> {
    let n = nets.num_agents();
    let a = nets.num_actions();
    let mut obs = env.reset(seed) * obs_scale;
    let mut carry = Carry::zeros(n, nets.obs_size(), a);
    loop {
        let prev_mean = neighbor_mean_actions(nets.topology(), carry.prev_actions.as_deref(), a)?;
        let q = nets.q_values(obs.view(), carry.prev_obs.view(), carry.prev_q.view(), prev_mean.view())?;
        let actions = greedy_actions(q.view())?;
        let out = env.step(&actions)?;
        on_step(env, &actions, &out);
        carry = Carry {
            prev_obs: obs,
            prev_q: q,
            prev_actions: Some(actions),
        };
        obs = out.observations * obs_scale;
        if out.done {
            return Ok(());
        }
    }
}

/// Greedy (ε = 0) evaluation: per-episode environment metrics averaged over
/// `episodes` episodes.
pub fn evaluate(nets: &AgentNets, env: &mut dyn Environment, episodes: usize, obs_scale: f64) -> Result<BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for ep in 0..episodes {
        greedy_episode(nets, env, evaluation_seed(ep), obs_scale, |_, _, _| {})?;
        for (k, v) in env.metrics() {
            *sums.entry(k).or_insert(0.0) += v;
        }
    }
    Ok(sums.into_iter().map(|(k, v)| (k, v / episodes as f64)).collect())
}

/// Per-agent record of one greedy episode with the given reset seed.
pub fn greedy_trajectory(nets: &AgentNets, env: &mut dyn Environment, seed: u64, obs_scale: f64) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    let mut step = 0;
    greedy_episode(nets, env, seed, obs_scale, |env, actions, out| {
        let queues = env.queue_totals();
        for (agent, (&action, &reward)) in actions.iter().zip(&out.rewards).enumerate() {
            rows.push(TrajectoryRow {
                step,
                agent,
                action,
                reward,
                queue_total: queues.as_ref().map(|q| q[agent]),
            });
        }
        step += 1;
    })?;
    Ok(rows)
}

/// Independent random streams of one run.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub env: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            init: stream(0),
            explore: stream(1),
            replay: stream(2),
            env: stream(3),
        }
    }
}

/// Owns everything one training run mutates.
pub struct Trainer {
    hp: HyperParams,
    nets: AgentNets,
    opts: Optimizers,
    buffer: ReplayBuffer,
    env: Box<dyn Environment>,
    rngs: RunRngs,
    obs: Array2<f64>,
    carry: Carry,
    t: usize,
    steps: u64,
    total_steps: u64,
    updates: u64,
    episodes: u64,
    last_loss: Option<LossReport>,
}

impl Trainer {
    pub fn new(
        variant: AgentVariant,
        mut env: Box<dyn Environment>,
        sizes: &NetSizes,
        hp: HyperParams,
        seed: u64,
        total_steps: u64,
    ) -> Result<Self> {
        hp.validate()?;
        let mut rngs = RunRngs::new(seed);
        let nets = AgentNets::new(
            variant,
            env.topology().clone(),
            env.obs_size(),
            env.num_actions(),
            sizes,
            &mut rngs.init,
        )?;
        let obs = env.reset(rngs.env.next_u64()) * hp.obs_scale;
        let carry = Carry::zeros(nets.num_agents(), nets.obs_size(), nets.num_actions());
        Ok(Self {
            opts: Optimizers::new(&hp),
            buffer: ReplayBuffer::new(hp.capacity)?,
            hp,
            nets,
            env,
            rngs,
            obs,
            carry,
            t: 0,
            steps: 0,
            total_steps,
            updates: 0,
            episodes: 0,
            last_loss: None,
        })
    }

    pub fn nets(&self) -> &AgentNets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut AgentNets {
        &mut self.nets
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn last_loss(&self) -> Option<LossReport> {
        self.last_loss
    }

    pub fn epsilon(&self) -> f64 {
        self.hp.epsilon.value(self.steps, self.total_steps)
    }

    /// One environment step, plus an update and target sync when due.
    pub fn step(&mut self) -> Result<()> {
        let eps = self.epsilon();
        let out = rollout_step(
            self.env.as_mut(),
            &self.nets,
            self.obs.view(),
            &self.carry,
            self.t,
            eps,
            &self.hp,
            &mut self.rngs.explore,
        )?;
        let done = out.outcome.done;
        self.buffer.push(out.transition);
        self.steps += 1;

        let ready = self.buffer.len() >= self.hp.batch_size.max(self.hp.learning_starts);
        if ready && self.steps % self.hp.train_every == 0 {
            self.last_loss = train_step(&self.buffer, &mut self.nets, &mut self.opts, &self.hp, &mut self.rngs.replay)?;
            self.updates += 1;
        }
        sync_target(&mut self.nets, self.steps, self.hp.target_period)?;

        if done {
            self.episodes += 1;
            self.obs = self.env.reset(self.rngs.env.next_u64()) * self.hp.obs_scale;
            self.carry = Carry::zeros(self.nets.num_agents(), self.nets.obs_size(), self.nets.num_actions());
            self.t = 0;
        } else {
            self.obs = out.next_obs;
            self.carry = out.carry;
            self.t += 1;
        }
        Ok(())
    }

    pub fn run_steps(&mut self, count: u64) -> Result<()> {
        for _ in 0..count {
            self.step()?;
        }
        Ok(())
    }
}
