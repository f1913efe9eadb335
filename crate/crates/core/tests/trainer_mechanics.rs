use dccp_marl::dccp::AgentTopology;
use dccp_marl::envs::{EnvSpec, SyncGridConfig, TrafficConfig};
use dccp_marl::nn::{OptimizerState, ParameterBlock, Parameterized};
use dccp_marl::trainer::{
    bellman_target, opn_loss_backward, prn_loss_backward, rollout_step, select_actions, sync_target, update_on_batch,
    vfn_loss_backward, AgentNets, Batch, Carry, HyperParams, JointTransition, NetSizes, Optimizers, ReplayBuffer,
    Trainer,
};
use dccp_marl::vfn::{greedy_action, AgentVariant, VfnDims, VfnInputs, VfnNet};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_sizes() -> NetSizes {
    NetSizes {
        dqn_hidden: vec![8],
        encoder_hidden: 6,
        kernels: 2,
        kernel_size: 3,
    }
}

fn snapshot<P: Parameterized + ?Sized>(p: &P) -> Vec<Vec<f64>> {
    p.blocks().iter().map(|b| b.values().to_vec()).collect()
}

/// Collects `steps` exploratory transitions from the default traffic grid.
fn collect(variant: AgentVariant, steps: usize, seed: u64) -> (AgentNets, ReplayBuffer) {
    let mut env = EnvSpec::TrafficGridLite(TrafficConfig::default()).build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nets = AgentNets::new(variant, env.topology().clone(), env.obs_size(), env.num_actions(), &small_sizes(), &mut rng)
        .unwrap();
    let hp = HyperParams {
        obs_scale: 0.1,
        ..HyperParams::default()
    };
    let mut buffer = ReplayBuffer::new(64).unwrap();
    let mut obs = env.reset(seed) * hp.obs_scale;
    let mut carry = Carry::zeros(nets.num_agents(), nets.obs_size(), nets.num_actions());
    for t in 0..steps {
        let out = rollout_step(env.as_mut(), &nets, obs.view(), &carry, t, 0.5, &hp, &mut rng).unwrap();
        buffer.push(out.transition);
        obs = out.next_obs;
        carry = out.carry;
    }
    (nets, buffer)
}

fn full_batch(buffer: &ReplayBuffer) -> Batch {
    buffer.batch(&(0..buffer.len()).collect::<Vec<_>>()).unwrap()
}

fn zero_all(nets: &mut AgentNets) {
    nets.vfn.zero_grad();
    nets.prn.zero_grad();
    nets.opn.zero_grad();
}

fn grads_nonzero<P: Parameterized + ?Sized>(p: &P) -> bool {
    !p.grads_are_zero()
}

#[test]
fn each_loss_touches_only_its_own_parameters() {
    let (mut nets, buffer) = collect(AgentVariant::Full, 12, 1);
    let batch = full_batch(&buffer);

    zero_all(&mut nets);
    vfn_loss_backward(&mut nets, &batch, 0.9).unwrap();
    assert!(grads_nonzero(&nets.vfn));
    assert!(nets.prn.grads_are_zero() && nets.opn.grads_are_zero() && nets.target.grads_are_zero());

    zero_all(&mut nets);
    prn_loss_backward(&mut nets, &batch, 1.0).unwrap();
    assert!(grads_nonzero(&nets.prn));
    assert!(nets.vfn.grads_are_zero() && nets.opn.grads_are_zero());

    zero_all(&mut nets);
    opn_loss_backward(&mut nets, &batch, 1.0).unwrap();
    assert!(grads_nonzero(&nets.opn));
    assert!(nets.vfn.grads_are_zero() && nets.prn.grads_are_zero());
}

#[test]
fn zero_coefficients_freeze_predictors_bitwise() {
    let hp = HyperParams {
        lambda_prn: 0.0,
        lambda_opn: 0.0,
        batch_size: 4,
        capacity: 64,
        obs_scale: 0.1,
        ..HyperParams::default()
    };
    let env = EnvSpec::TrafficGridLite(TrafficConfig::default()).build().unwrap();
    let mut trainer = Trainer::new(AgentVariant::Full, env, &small_sizes(), hp, 3, 200).unwrap();
    let prn0 = snapshot(&trainer.nets().prn);
    let opn0 = snapshot(&trainer.nets().opn);
    let vfn0 = snapshot(&trainer.nets().vfn);
    trainer.run_steps(40).unwrap();
    assert!(trainer.updates() > 0);
    assert_eq!(snapshot(&trainer.nets().prn), prn0);
    assert_eq!(snapshot(&trainer.nets().opn), opn0);
    assert_ne!(snapshot(&trainer.nets().vfn), vfn0);
    let loss = trainer.last_loss().unwrap();
    assert!(loss.prn > 0.0 && loss.opn > 0.0);
    assert_eq!(loss.total, loss.vfn);
}

/// `relu(W x + b)` layers then a linear output, evaluated with plain loops.
fn manual_mlp(blocks: &[&ParameterBlock], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let layers = blocks.len() / 2;
    for l in 0..layers {
        let (w, b) = (blocks[2 * l], blocks[2 * l + 1]);
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        let mut y = vec![0.0; out];
        for o in 0..out {
            let mut z = b.values()[o];
            for i in 0..inp {
                z += w.values()[o * inp + i] * h[i];
            }
            y[o] = if l + 1 < layers { z.max(0.0) } else { z };
        }
        h = y;
    }
    h
}

#[test]
fn one_transition_batch_matches_hand_computed_loss() {
    let topo = AgentTopology::full_grid(1, 2, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut nets = AgentNets::new(AgentVariant::Iql, topo, 1, 2, &small_sizes(), &mut rng).unwrap();
    // Distinct target so the test would notice online/target mix-ups.
    for b in nets.target.blocks_mut() {
        for v in b.values_mut() {
            *v += 0.1;
        }
    }
    let rec = JointTransition {
        t: 0,
        prev_obs: Array2::zeros((2, 1)),
        prev_q: Array2::zeros((2, 2)),
        obs: array![[1.0], [0.0]],
        actions: vec![1, 0],
        rewards: vec![1.0, 0.0],
        q: Array2::zeros((2, 2)),
        next_obs: array![[0.5], [-1.0]],
        prev_mean_actions: Array2::zeros((2, 2)),
        mean_actions: Array2::zeros((2, 2)),
        terminal: false,
    };
    let gamma = 0.9;
    let online = nets.vfn.blocks();
    let target = nets.target.blocks();
    let mut expected = 0.0;
    for i in 0..2 {
        let q_next = manual_mlp(&target, &[rec.next_obs[[i, 0]]]);
        let y = rec.rewards[i] + gamma * q_next[0].max(q_next[1]);
        let q = manual_mlp(&online, &[rec.obs[[i, 0]]]);
        expected += (y - q[rec.actions[i]]).powi(2);
    }
    let batch = Batch::stack(&[&rec]).unwrap();
    let got = vfn_loss_backward(&mut nets, &batch, gamma).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn frozen_parameters_give_identical_loss_reports() {
    let (mut nets, buffer) = collect(AgentVariant::Full, 10, 5);
    let batch = full_batch(&buffer);
    let hp = HyperParams {
        learning_rate: 0.0,
        ..HyperParams::default()
    };
    let mut opts = Optimizers {
        vfn: OptimizerState::sgd(0.0),
        prn: OptimizerState::sgd(0.0),
        opn: OptimizerState::sgd(0.0),
    };
    let a = update_on_batch(&mut nets, &mut opts, &hp, &batch).unwrap();
    let b = update_on_batch(&mut nets, &mut opts, &hp, &batch).unwrap();
    assert_eq!(a, b);
    let mut adam = Optimizers::new(&hp);
    let c = update_on_batch(&mut nets, &mut adam, &hp, &batch).unwrap();
    assert_eq!(a, c);
}

#[test]
fn period_one_keeps_target_equal_to_online() {
    let hp = HyperParams {
        target_period: 1,
        batch_size: 4,
        capacity: 64,
        ..HyperParams::default()
    };
    let env = EnvSpec::SyncGrid(SyncGridConfig::default()).build().unwrap();
    let mut trainer = Trainer::new(AgentVariant::Full, env, &small_sizes(), hp, 6, 100).unwrap();
    for _ in 0..20 {
        trainer.step().unwrap();
        assert_eq!(snapshot(&trainer.nets().target), snapshot(&trainer.nets().vfn));
    }
}

#[test]
fn target_is_stale_between_syncs_and_exact_after() {
    let hp = HyperParams {
        target_period: 7,
        batch_size: 4,
        capacity: 64,
        ..HyperParams::default()
    };
    let env = EnvSpec::SyncGrid(SyncGridConfig::default()).build().unwrap();
    let mut trainer = Trainer::new(AgentVariant::Full, env, &small_sizes(), hp, 7, 100).unwrap();
    let topo = trainer.nets().topology().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let probe_o = Array2::from_shape_fn((9, 1), |_| rng.random_range(-1.0..1.0));
    let probe_oh = Array2::from_shape_fn((9, 1), |_| rng.random_range(-1.0..1.0));
    let probe_qh = Array2::from_shape_fn((9, 2), |_| rng.random_range(-1.0..1.0));
    let inputs = VfnInputs {
        obs: probe_o.view(),
        predicted_obs: Some(probe_oh.view()),
        predicted_q: Some(probe_qh.view()),
        mean_prev_actions: None,
    };
    let mut last = trainer.nets().target.infer(&topo, inputs).unwrap();
    for step in 1..=21u64 {
        trainer.step().unwrap();
        let now = trainer.nets().target.infer(&topo, inputs).unwrap();
        if step % 7 == 0 {
            assert_eq!(now, trainer.nets().vfn.infer(&topo, inputs).unwrap());
            last = now;
        } else {
            assert_eq!(now, last, "target moved at step {step}");
        }
    }
}

#[test]
fn sync_target_follows_period() {
    let (mut nets, _) = collect(AgentVariant::Iql, 1, 9);
    for v in nets.vfn.blocks_mut().into_iter().flat_map(|b| b.values_mut().iter_mut()) {
        *v += 1.0;
    }
    assert!(!sync_target(&mut nets, 3, 5).unwrap());
    assert_ne!(snapshot(&nets.target), snapshot(&nets.vfn));
    assert!(sync_target(&mut nets, 10, 5).unwrap());
    assert_eq!(snapshot(&nets.target), snapshot(&nets.vfn));
    assert!(sync_target(&mut nets, 1, 0).is_err());
}

#[test]
fn full_exploration_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let q = Array2::from_shape_fn((100, 5), |(r, c)| (r * 7 + c) as f64);
    let mut counts = [0usize; 5];
    for _ in 0..100 {
        for a in select_actions(q.view(), 1.0, &mut rng).unwrap() {
            counts[a] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    assert_eq!(n, 10_000);
    let e = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 4 degrees of freedom, 0.1% upper tail.
    assert!(chi2 < 18.467, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn no_exploration_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
    let acts = select_actions(q.view(), 0.0, &mut rng).unwrap();
    for (r, &a) in acts.iter().enumerate() {
        assert_eq!(a, greedy_action(&q.row(r).to_vec(), None).unwrap());
    }
}

#[test]
fn episode_start_predictions_are_deterministic() {
    let topo = AgentTopology::full_grid(3, 3, 3).unwrap();
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        AgentNets::new(AgentVariant::Full, topo.clone(), 12, 5, &small_sizes(), &mut rng).unwrap()
    };
    let (a, b) = (build(), build());
    let carry = Carry::zeros(9, 12, 5);
    let pa = a.predict(carry.prev_obs.view(), carry.prev_q.view()).unwrap();
    let pb = b.predict(carry.prev_obs.view(), carry.prev_q.view()).unwrap();
    assert_eq!(pa, pb);
    assert!(pa.obs.is_some() && pa.q.is_some());
}

#[test]
fn rollout_records_behavior_time_values() {
    let (nets, buffer) = collect(AgentVariant::Full, 3, 13);
    let r0 = buffer.get(0).unwrap();
    let r1 = buffer.get(1).unwrap();
    assert!(r0.prev_obs.iter().all(|&v| v == 0.0) && r0.prev_q.iter().all(|&v| v == 0.0));
    assert_eq!(r1.prev_obs, r0.obs);
    assert_eq!(r1.prev_q, r0.q);
    assert_eq!(r1.obs, r0.next_obs);
    let q = nets
        .q_values(r1.obs.view(), r1.prev_obs.view(), r1.prev_q.view(), r1.prev_mean_actions.view())
        .unwrap();
    assert_eq!(q, r1.q);
    assert!(!r0.terminal);
}

#[test]
fn bellman_target_cases() {
    assert_eq!(bellman_target(1.0, &[3.0, 7.0], true, 0.9), 1.0);
    assert!((bellman_target(1.0, &[2.0, -1.0], false, 0.9) - 2.8).abs() < 1e-12);
    for r in [-2.0, 0.0, 3.5] {
        assert_eq!(bellman_target(r, &[10.0, -4.0], false, 0.0), r);
    }
}

#[test]
fn full_network_with_silenced_extras_is_iql() {
    let topo = AgentTopology::full_grid(2, 3, 3).unwrap();
    let (d, a) = (4, 3);
    let hidden = [7, 5];
    let dims = VfnDims {
        obs_size: d,
        num_actions: a,
        num_agents: 6,
        dqn_hidden: &hidden,
        kernels: 2,
        kernel_size: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut full = VfnNet::new(AgentVariant::Full, dims, &mut rng).unwrap();
    let mut iql = VfnNet::new(AgentVariant::Iql, dims, &mut rng).unwrap();
    // Zero every first-layer column beyond the own observation and copy the
    // rest into the independent learner.
    let in_full = AgentVariant::Full.dqn_input_dim(d, a);
    {
        let w = full.dqn_mut().layers_mut()[0].weight_mut().values_mut();
        for o in 0..hidden[0] {
            for c in d..in_full {
                w[o * in_full + c] = 0.0;
            }
        }
    }
    let w_full = full.dqn().layers()[0].weight().values().to_vec();
    {
        let w = iql.dqn_mut().layers_mut()[0].weight_mut().values_mut();
        for o in 0..hidden[0] {
            w[o * d..(o + 1) * d].copy_from_slice(&w_full[o * in_full..o * in_full + d]);
        }
    }
    let b0 = full.dqn().layers()[0].bias().values().to_vec();
    iql.dqn_mut().layers_mut()[0].bias_mut().values_mut().copy_from_slice(&b0);
    for l in 1..full.dqn().layers().len() {
        let src = full.dqn().layers()[l].clone();
        iql.dqn_mut().layers_mut()[l] = src;
    }
    let o = Array2::from_shape_fn((6, d), |_| rng.random_range(-1.0..1.0));
    let oh = Array2::from_shape_fn((6, d), |_| rng.random_range(-1.0..1.0));
    let qh = Array2::from_shape_fn((6, a), |_| rng.random_range(-1.0..1.0));
    let q_full = full
        .infer(
            &topo,
            VfnInputs {
                obs: o.view(),
                predicted_obs: Some(oh.view()),
                predicted_q: Some(qh.view()),
                mean_prev_actions: None,
            },
        )
        .unwrap();
    let q_iql = iql.infer(&topo, VfnInputs::observation_only(o.view())).unwrap();
    for (x, y) in q_full.iter().zip(q_iql.iter()) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn greedy_action_ignores_shifts_and_positive_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..500 {
        let q: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let base = greedy_action(&q, None).unwrap();
        let c = rng.random_range(-10.0..10.0);
        let s = rng.random_range(0.1..10.0);
        let shifted: Vec<f64> = q.iter().map(|v| s * v + c).collect();
        assert_eq!(greedy_action(&shifted, None).unwrap(), base);
    }
    assert_eq!(greedy_action(&[1.0, 2.0, 2.0], None).unwrap(), 1);
}
