//! Self-check suites shared by the command line and the test targets.
//!
//! The gradient suite compares every backward pass against central finite
//! differences. The oracle suite compares the production code against
//! deliberately naive reimplementations (nested loops over grid
//! coordinates, counting, brute-force XOR).

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dccp::{AgentTopology, DccpParams};
use crate::envs::{parities, Environment, Lane, TrafficConfig, TrafficGridLite, LANES};
use crate::error::Result;
use crate::mean_field::{mean_action_of_indices, remainder_bound_check, RemainderProbe};
use crate::nn::{grad_check, Activation, DenseLayer, GradCheckReport, Mlp, ParameterBlock, Parameterized};
use crate::predictors::{OpnNet, PrnNet};
use crate::trainer::bellman_loss_backward;
use crate::vfn::{AgentVariant, VfnDims, VfnInputs, VfnNet};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const ORACLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuiteReport {
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn push_grad(&mut self, name: impl Into<String>, r: &GradCheckReport) {
        let detail = match &r.worst {
            Some((block, idx)) => format!(
                "max rel err {:.3e} over {} entries (worst {block}[{idx}]: analytic {:.6e}, numeric {:.6e})",
                r.max_rel_error, r.checked, r.analytic_at_worst, r.numeric_at_worst
            ),
            None => format!("max rel err {:.3e} over {} entries", r.max_rel_error, r.checked),
        };
        self.push(name, r.passed() && r.checked > 0, detail);
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

/// A model plus its input, so input cotangents get checked as well.
struct WithInput<M> {
    model: M,
    input: ParameterBlock,
}

impl<M: Parameterized> Parameterized for WithInput<M> {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        let mut b = self.model.blocks();
        b.push(&self.input);
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut b = self.model.blocks_mut();
        b.push(&mut self.input);
        b
    }
}

fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn random_block<R: Rng + ?Sized>(name: &str, rows: usize, cols: usize, rng: &mut R) -> ParameterBlock {
    ParameterBlock::uniform(name, &[rows, cols], 1.0, rng)
}

/// Mixing weights start uniform at `1/K`; spread them so every weight
/// gradient is distinct.
fn randomize_weights<R: Rng + ?Sized>(params: &mut DccpParams, rng: &mut R) {
    for w in params.agent_weights_mut().values_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
}

fn weighted_sum(y: &Array2<f64>, c: &Array2<f64>) -> f64 {
    (y * c).sum()
}

fn add_input_grad(input: &mut ParameterBlock, dx: &Array2<f64>) {
    for (g, d) in input.grads_mut().iter_mut().zip(dx.iter()) {
        *g += d;
    }
}

fn dense_check<R: Rng + ?Sized>(report: &mut SuiteReport, act: Activation, rng: &mut R) -> Result<()> {
    let layer = DenseLayer::new("dense", 4, 3, act, rng)?;
    let mut m = WithInput {
        model: layer,
        input: random_block("x", 5, 4, rng),
    };
    let c = random_matrix(5, 3, rng);
    let r = grad_check(
        &mut m,
        |m| {
            let (y, cache) = m.model.forward(m.input.matrix()).expect("fixture shapes");
            let dx = m.model.backward(&cache, c.view()).expect("fixture shapes");
            add_input_grad(&mut m.input, &dx);
            weighted_sum(&y, &c)
        },
        FD_STEP,
        FD_TOLERANCE,
    );
    report.push_grad(format!("dense layer ({act:?})"), &r);
    Ok(())
}

fn mlp_check<R: Rng + ?Sized>(report: &mut SuiteReport, rng: &mut R) -> Result<()> {
    let mut m = WithInput {
        model: Mlp::new("mlp", &[6, 8, 7, 3], rng)?,
        input: random_block("x", 4, 6, rng),
    };
    let c = random_matrix(4, 3, rng);
    let r = grad_check(
        &mut m,
        |m| {
            let (y, cache) = m.model.forward(m.input.matrix()).expect("fixture shapes");
            let dx = m.model.backward(&cache, c.view()).expect("fixture shapes");
            add_input_grad(&mut m.input, &dx);
            weighted_sum(&y, &c)
        },
        FD_STEP,
        FD_TOLERANCE,
    );
    report.push_grad("dense stack", &r);
    Ok(())
}

fn dccp_check<R: Rng + ?Sized>(report: &mut SuiteReport, label: &str, topo: &AgentTopology, rng: &mut R) -> Result<()> {
    let n = topo.num_agents();
    let (m_ch, batch) = (2, 2);
    let mut params = DccpParams::new("dccp", m_ch, 3, 3, n, rng)?;
    randomize_weights(&mut params, rng);
    let mut m = WithInput {
        model: params,
        input: random_block("x", batch * n, m_ch, rng),
    };
    let c = random_matrix(batch * n, m_ch, rng);
    let r = grad_check(
        &mut m,
        |m| {
            let (z, cache) = m.model.forward(topo, m.input.matrix()).expect("fixture shapes");
            let dx = m.model.backward(&cache, c.view()).expect("fixture shapes");
            add_input_grad(&mut m.input, &dx);
            weighted_sum(&z, &c)
        },
        FD_STEP,
        FD_TOLERANCE,
    );
    report.push_grad(format!("dccp forward ({label})"), &r);
    Ok(())
}

fn predictor_checks<R: Rng + ?Sized>(report: &mut SuiteReport, label: &str, topo: &AgentTopology, rng: &mut R) -> Result<()> {
    let (obs, act, batch) = (3, 2, 2);
    let n = topo.num_agents();
    let prev_obs = random_matrix(batch * n, obs, rng);
    let prev_q = random_matrix(batch * n, act, rng);

    let mut prn = PrnNet::new(obs, act, 5, 2, 3, n, rng)?;
    let q_target = random_matrix(batch * n, act, rng);
    let r = grad_check(
        &mut prn,
        |p| {
            p.loss_and_backward(topo, prev_obs.view(), prev_q.view(), q_target.view(), 1.0)
                .expect("fixture shapes")
        },
        FD_STEP,
        FD_TOLERANCE,
    );
    report.push_grad(format!("PRN loss ({label})"), &r);

    let mut opn = OpnNet::new(obs, act, 5, 2, 3, n, rng)?;
    let o_target = random_matrix(batch * n, obs, rng);
    let r = grad_check(
        &mut opn,
        |p| {
            p.loss_and_backward(topo, prev_obs.view(), prev_q.view(), o_target.view(), 1.0)
                .expect("fixture shapes")
        },
        FD_STEP,
        FD_TOLERANCE,
    );
    report.push_grad(format!("OPN loss ({label})"), &r);
    Ok(())
}

fn vfn_check<R: Rng + ?Sized>(
    report: &mut SuiteReport,
    label: &str,
    variant: AgentVariant,
    topo: &AgentTopology,
    rng: &mut R,
) -> Result<()> {
    let (obs, act, batch) = (3, 2, 2);
    let n = topo.num_agents();
    let hidden = [6, 5];
    let dims = VfnDims {
        obs_size: obs,
        num_actions: act,
        num_agents: n,
        dqn_hidden: &hidden,
        kernels: 2,
        kernel_size: 3,
    };
    let mut vfn = VfnNet::new(variant, dims, rng)?;
    if let Some(c) = vfn.se_comm_mut() {
        randomize_weights(c, rng);
    }
    if let Some(c) = vfn.me_comm_mut() {
        randomize_weights(c, rng);
    }
    let rows = batch * n;
    let o = random_matrix(rows, obs, rng);
    let o_hat = random_matrix(rows, obs, rng);
    let q_hat = random_matrix(rows, act, rng);
    let mean_prev = random_matrix(rows, act, rng);
    let actions: Vec<usize> = (0..rows).map(|_| rng.random_range(0..act)).collect();
    let targets: Vec<f64> = (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect();
    let inputs = VfnInputs {
        obs: o.view(),
        predicted_obs: variant.uses_state_estimate().then(|| o_hat.view()),
        predicted_q: variant.uses_mean_field_estimate().then(|| q_hat.view()),
        mean_prev_actions: variant.uses_prev_actions().then(|| mean_prev.view()),
    };
    let r = grad_check(
        &mut vfn,
        |v| bellman_loss_backward(v, topo, inputs, &actions, &targets, batch).expect("fixture shapes"),
        FD_STEP,
        FD_TOLERANCE,
    );
    report.push_grad(format!("VFN Bellman loss, {variant} ({label})"), &r);
    Ok(())
}

/// Finite-difference checks of every backward pass on fixtures up to 3x3
/// agents.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::default();
    dense_check(&mut report, Activation::Identity, &mut rng)?;
    dense_check(&mut report, Activation::Relu, &mut rng)?;
    mlp_check(&mut report, &mut rng)?;
    let fixtures = [
        ("1x1", AgentTopology::full_grid(1, 1, 3)?),
        ("2x2", AgentTopology::full_grid(2, 2, 3)?),
        ("3x3", AgentTopology::full_grid(3, 3, 3)?),
        ("sparse 3x3", AgentTopology::from_positions(3, 3, vec![(0, 0), (0, 2), (1, 1), (2, 1)], 3)?),
    ];
    for (label, topo) in &fixtures {
        dccp_check(&mut report, label, topo, &mut rng)?;
    }
    for (label, topo) in &fixtures[1..3] {
        predictor_checks(&mut report, label, topo, &mut rng)?;
        for variant in AgentVariant::ALL {
            vfn_check(&mut report, label, variant, topo, &mut rng)?;
        }
    }
    Ok(report)
}

/// Depthwise convolution written directly over grid coordinates: scatter
/// agents into a zero field, correlate each channel with each kernel, mix by
/// the agent's weights.
pub fn dccp_reference(params: &DccpParams, topo: &AgentTopology, inputs: &Array2<f64>) -> Array2<f64> {
    let (m_ch, k_n, n) = (params.channels(), params.kernels_per_channel(), params.kernel_size());
    let (h, w) = (topo.height() as isize, topo.width() as isize);
    let agents = topo.num_agents();
    let half = (n / 2) as isize;
    let kernels = params.kernels().values();
    let weights = params.agent_weights().values();
    let mut out = Array2::zeros(inputs.dim());
    for b in 0..inputs.nrows() / agents {
        let mut field = vec![vec![vec![0.0; m_ch]; w as usize]; h as usize];
        for (i, &(r, c)) in topo.positions().iter().enumerate() {
            for m in 0..m_ch {
                field[r][c][m] = inputs[[b * agents + i, m]];
            }
        }
        for (i, &(r, c)) in topo.positions().iter().enumerate() {
            for m in 0..m_ch {
                let mut z = 0.0;
                for k in 0..k_n {
                    let mut u = 0.0;
                    for a in 0..n {
                        for bb in 0..n {
                            let rr = r as isize + a as isize - half;
                            let cc = c as isize + bb as isize - half;
                            if rr < 0 || cc < 0 || rr >= h || cc >= w {
                                continue;
                            }
                            let kv = kernels[((m * k_n + k) * n + a) * n + bb];
                            u += kv * field[rr as usize][cc as usize][m];
                        }
                    }
                    z += weights[(i * m_ch + m) * k_n + k] * u;
                }
                out[[b * agents + i, m]] = z;
            }
        }
    }
    out
}

fn random_topology<R: Rng + ?Sized>(max_side: usize, patch: usize, rng: &mut R) -> Result<AgentTopology> {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let mut cells: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
    let keep = rng.random_range(1..=cells.len());
    for i in 0..keep {
        let j = rng.random_range(i..cells.len());
        cells.swap(i, j);
    }
    cells.truncate(keep);
    AgentTopology::from_positions(h, w, cells, patch)
}

/// Brute-force neighbor mean: scan the whole grid for agents inside the
/// patch; zero for an agent with none.
pub fn neighbor_mean_reference(topo: &AgentTopology, values: &Array2<f64>) -> Array2<f64> {
    let half = (topo.patch_size() / 2) as isize;
    let mut out = Array2::zeros(values.dim());
    for (i, &(r, c)) in topo.positions().iter().enumerate() {
        let mut count = 0;
        for (j, &(rr, cc)) in topo.positions().iter().enumerate() {
            let (dr, dc) = (rr as isize - r as isize, cc as isize - c as isize);
            if j != i && dr.abs() <= half && dc.abs() <= half {
                count += 1;
                for a in 0..values.ncols() {
                    out[[i, a]] += values[[j, a]];
                }
            }
        }
        if count > 0 {
            for a in 0..values.ncols() {
                out[[i, a]] /= count as f64;
            }
        }
    }
    out
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// DCCP against the grid-coordinate oracle on `fixtures` random cases
/// (grids up to 4x4, M <= 5, K <= 4).
pub fn dccp_oracle_check(fixtures: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..fixtures {
        let n = [1, 3, 5][rng.random_range(0..3)];
        let topo = random_topology(4, n, &mut rng)?;
        let m_ch = rng.random_range(1..=5);
        let k_n = rng.random_range(1..=4);
        let mut params = DccpParams::new("dccp", m_ch, k_n, n, topo.num_agents(), &mut rng)?;
        randomize_weights(&mut params, &mut rng);
        let batch = rng.random_range(1..=3);
        let x = random_matrix(batch * topo.num_agents(), m_ch, &mut rng);
        let got = params.infer(&topo, x.view())?;
        worst = worst.max(max_abs_diff(&got, &dccp_reference(&params, &topo, &x)));
    }
    Ok(Check {
        name: format!("dccp vs nested-loop oracle ({fixtures} fixtures)"),
        passed: worst <= ORACLE_TOLERANCE,
        detail: format!("max abs diff {worst:.3e}"),
    })
}

/// `mean_action` against counting on `cases` random neighbor sets.
pub fn mean_action_oracle_check(cases: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let a_n = rng.random_range(1..=6);
        let k = rng.random_range(0..=8);
        let actions: Vec<usize> = (0..k).map(|_| rng.random_range(0..a_n)).collect();
        let got = mean_action_of_indices(&actions, a_n)?;
        for a in 0..a_n {
            let expected = if k == 0 {
                1.0 / a_n as f64
            } else {
                actions.iter().filter(|&&x| x == a).count() as f64 / k as f64
            };
            worst = worst.max((got.values()[a] - expected).abs());
        }
        if got.is_isolated() != (k == 0) {
            worst = f64::INFINITY;
        }
    }
    Ok(Check {
        name: format!("mean action vs counting ({cases} cases)"),
        passed: worst <= ORACLE_TOLERANCE,
        detail: format!("max abs diff {worst:.3e}"),
    })
}

/// Mean-field estimate with zeroed compensation against the brute-force
/// neighbor mean.
pub fn zero_compensation_check(fixtures: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..fixtures {
        let topo = random_topology(4, 3, &mut rng)?;
        let a_n = rng.random_range(1..=5);
        let dims = VfnDims {
            obs_size: 2,
            num_actions: a_n,
            num_agents: topo.num_agents(),
            dqn_hidden: &[4],
            kernels: 2,
            kernel_size: 3,
        };
        let mut net = VfnNet::new(AgentVariant::Full, dims, &mut rng)?;
        net.me_comm_mut()
            .expect("full variant has a compensation layer")
            .agent_weights_mut()
            .values_mut()
            .fill(0.0);
        let q_hat = random_matrix(topo.num_agents(), a_n, &mut rng);
        let got = net.mean_field_estimate(&topo, q_hat.view())?;
        worst = worst.max(max_abs_diff(&got, &neighbor_mean_reference(&topo, &q_hat)));
    }
    Ok(Check {
        name: format!("zero-compensation estimate vs neighbor mean ({fixtures} fixtures)"),
        passed: worst <= ORACLE_TOLERANCE,
        detail: format!("max abs diff {worst:.3e}"),
    })
}

/// Second-order Taylor remainder bound on random quadratic pairwise
/// Q-functions.
pub fn remainder_check(trials: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = RemainderProbe::random(5, 1.5, &mut rng)?;
    Ok(match remainder_bound_check(&probe, trials, 8, &mut rng) {
        Ok(r) => Check {
            name: format!("Taylor remainder bound ({trials} trials)"),
            passed: true,
            detail: format!(
                "max |R| {:.4} <= 2M = {:.4}; max first-order term {:.3e}",
                r.max_abs_remainder, r.bound, r.max_first_order
            ),
        },
        Err(e) => Check {
            name: format!("Taylor remainder bound ({trials} trials)"),
            passed: false,
            detail: e.to_string(),
        },
    })
}

/// Parity against an XOR scan over grid coordinates for every bit pattern
/// of a 3x3 grid.
pub fn parity_oracle_check() -> Result<Check> {
    let topo = AgentTopology::full_grid(3, 3, 3)?;
    let mut mismatches = 0;
    for mask in 0u32..512 {
        let bits: Vec<u8> = (0..9).map(|i| ((mask >> i) & 1) as u8).collect();
        let got = parities(&topo, &bits);
        for (i, &(r, c)) in topo.positions().iter().enumerate() {
            let mut p = 0;
            for (j, &(rr, cc)) in topo.positions().iter().enumerate() {
                if (rr as isize - r as isize).abs() <= 1 && (cc as isize - c as isize).abs() <= 1 {
                    p ^= bits[j];
                }
            }
            mismatches += usize::from(got[i] != p);
        }
    }
    Ok(Check {
        name: "sync-grid parity vs XOR scan (512 patterns)".into(),
        passed: mismatches == 0,
        detail: format!("{mismatches} mismatches"),
    })
}

/// Traffic rewards recomputed from the environment's lane state, and vehicle
/// conservation, along random-phase episodes.
pub fn traffic_oracle_check(episodes: usize, seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = TrafficGridLite::new(TrafficConfig::default())?;
    let w = env.config().delay_weight;
    let n = env.num_agents();
    let mut worst: f64 = 0.0;
    let mut leaks = 0;
    for ep in 0..episodes {
        env.reset(seed.wrapping_add(ep as u64));
        loop {
            let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
            let out = env.step(&actions)?;
            for i in 0..n {
                let expected: f64 = -LANES
                    .iter()
                    .map(|&l: &Lane| env.queue_len(i, l) as f64 + w * env.wait_clock(i, l) as f64)
                    .sum::<f64>();
                worst = worst.max((out.rewards[i] - expected).abs());
            }
            if env.vehicles_arrived() != env.vehicles_queued() + env.vehicles_exited() {
                leaks += 1;
            }
            if out.done {
                break;
            }
        }
    }
    Ok(Check {
        name: format!("traffic reward and conservation ({episodes} episodes)"),
        passed: worst <= ORACLE_TOLERANCE && leaks == 0,
        detail: format!("max reward diff {worst:.3e}, {leaks} conservation failures"),
    })
}

/// Every brute-force equivalence check.
pub fn oracle_suite(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::default();
    report.checks.push(dccp_oracle_check(200, seed)?);
    report.checks.push(mean_action_oracle_check(1000, seed)?);
    report.checks.push(zero_compensation_check(100, seed)?);
    report.checks.push(remainder_check(10_000, seed)?);
    report.checks.push(parity_oracle_check()?);
    report.checks.push(traffic_oracle_check(3, seed)?);
    Ok(report)
}
