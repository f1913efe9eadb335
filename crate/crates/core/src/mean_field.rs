//! Mean-field machinery: neighbor mean actions, the mean-field Q baseline
//! action rule, and an exact probe of the second-order term the mean-field
//! expansion drops.

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::vfn::greedy_action;

/// Average of the neighbors' one-hot actions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAction {
    values: Vec<f64>,
    isolated: bool,
}

impl MeanAction {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Set when the agent had no neighbors and the uniform vector was used.
    pub fn is_isolated(&self) -> bool {
        self.isolated
    }
}

pub fn one_hot(action: usize, num_actions: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_actions];
    v[action] = 1.0;
    v
}

/// Elementwise mean of one-hot vectors. An empty list yields the uniform
/// distribution with the isolated flag set.
pub fn mean_action<V: AsRef<[f64]>>(neighbor_actions: &[V], num_actions: usize) -> Result<MeanAction> {
    if num_actions == 0 {
        return Err(config_err("action space must be non-empty"));
    }
    if neighbor_actions.is_empty() {
        return Ok(MeanAction {
            values: vec![1.0 / num_actions as f64; num_actions],
            isolated: true,
        });
    }
    let mut values = vec![0.0; num_actions];
    for (idx, a) in neighbor_actions.iter().enumerate() {
        let a = a.as_ref();
        if a.len() != num_actions {
            return Err(config_err(format!(
                "neighbor action {idx} has length {}, expected {num_actions}",
                a.len()
            )));
        }
        let ones = a.iter().filter(|&&x| x == 1.0).count();
        let zeros = a.iter().filter(|&&x| x == 0.0).count();
        if ones != 1 || zeros != num_actions - 1 {
            return Err(config_err(format!("neighbor action {idx} is not one-hot: {a:?}")));
        }
        for (v, x) in values.iter_mut().zip(a) {
            *v += x;
        }
    }
    let n = neighbor_actions.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(MeanAction {
        values,
        isolated: false,
    })
}

/// Same as [`mean_action`] for action indices.
pub fn mean_action_of_indices(actions: &[usize], num_actions: usize) -> Result<MeanAction> {
    if let Some(&bad) = actions.iter().find(|&&a| a >= num_actions) {
        return Err(config_err(format!("action {bad} outside 0..{num_actions}")));
    }
    let hots: Vec<Vec<f64>> = actions.iter().map(|&a| one_hot(a, num_actions)).collect();
    mean_action(&hots, num_actions)
}

/// Mean-field Q baseline decision: greedy action of a Q-head fed with
/// `[observation, mean of the neighbors' previous actions]`.
///
/// `prev_neighbor_actions` is `None` on the first step of an episode, where
/// the mean-action input is the zero vector.
pub fn mfq_estimate_action<F>(
    q_head: F,
    observation: &[f64],
    prev_neighbor_actions: Option<&[usize]>,
    num_actions: usize,
) -> Result<usize>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mean = match prev_neighbor_actions {
        Some(actions) => mean_action_of_indices(actions, num_actions)?.into_values(),
        None => vec![0.0; num_actions],
    };
    let mut input = Vec::with_capacity(observation.len() + num_actions);
    input.extend_from_slice(observation);
    input.extend_from_slice(&mean);
    let q = q_head(&input);
    if q.len() != num_actions {
        return Err(config_err(format!(
            "q-head returned {} values for {num_actions} actions",
            q.len()
        )));
    }
    greedy_action(&q, None)
}

/// A quadratic pairwise Q-function of a relaxed neighbor action:
/// `Q(a) = c + g.a + a.H.a / 2` with `||H||_2 <= smoothness`.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderProbe {
    dim: usize,
    constant: f64,
    gradient: Vec<f64>,
    hessian: Vec<f64>,
    smoothness: f64,
}

impl RemainderProbe {
    /// Random symmetric Hessian rescaled to Frobenius norm `smoothness`, which
    /// bounds its spectral norm.
    pub fn random<R: Rng + ?Sized>(dim: usize, smoothness: f64, rng: &mut R) -> Result<Self> {
        if dim == 0 || !(smoothness > 0.0) {
            return Err(config_err("probe needs dim > 0 and positive smoothness"));
        }
        let mut hessian = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in r..dim {
                let v = rng.random_range(-1.0..1.0);
                hessian[r * dim + c] = v;
                hessian[c * dim + r] = v;
            }
        }
        let frob = hessian.iter().map(|v| v * v).sum::<f64>().sqrt();
        if frob > 0.0 {
            hessian.iter_mut().for_each(|v| *v *= smoothness / frob);
        }
        Ok(Self {
            dim,
            constant: rng.random_range(-1.0..1.0),
            gradient: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            hessian,
            smoothness,
        })
    }

    /// Zero Hessian.
    pub fn linear<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        let mut probe = Self::random(dim, 1.0, rng)?;
        probe.hessian.fill(0.0);
        Ok(probe)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn value(&self, a: &[f64]) -> f64 {
        self.constant + dot(&self.gradient, a) + 0.5 * self.quadratic_form(a)
    }

    pub fn gradient_at(&self, a: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| self.gradient[r] + dot(&self.hessian[r * self.dim..(r + 1) * self.dim], a))
            .collect()
    }

    /// `d.H.d`, the second-order remainder for fluctuation `d`.
    pub fn quadratic_form(&self, d: &[f64]) -> f64 {
        (0..self.dim)
            .map(|r| d[r] * dot(&self.hessian[r * self.dim..(r + 1) * self.dim], d))
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemainderReport {
    pub trials: usize,
    /// Largest `|d.H.d|` over all neighbors and trials.
    pub max_abs_remainder: f64,
    /// `2 * smoothness`: the bound for fluctuations between simplex points.
    pub bound: f64,
    /// Largest `|sum_k grad Q(mean) . d_k|`.
    pub max_first_order: f64,
    /// Largest violation of the exact second-order Taylor identity.
    pub max_taylor_residual: f64,
}

const FIRST_ORDER_TOL: f64 = 1e-12;
const TAYLOR_TOL: f64 = 1e-10;

/// Draws random neighbor configurations (one-hot and relaxed simplex
/// actions), expands the pairwise Q around the mean action and checks the
/// remainder bound, the vanishing first-order term and the Taylor identity.
pub fn remainder_bound_check<R: Rng + ?Sized>(
    probe: &RemainderProbe,
    trials: usize,
    max_neighbors: usize,
    rng: &mut R,
) -> Result<RemainderReport> {
    if max_neighbors == 0 {
        return Err(config_err("max_neighbors must be positive"));
    }
    let dim = probe.dim();
    let bound = 2.0 * probe.smoothness();
    let mut report = RemainderReport {
        trials,
        max_abs_remainder: 0.0,
        bound,
        max_first_order: 0.0,
        max_taylor_residual: 0.0,
    };

    for trial in 0..trials {
        let count = rng.random_range(1..=max_neighbors);
        let actions: Vec<Vec<f64>> = (0..count)
            .map(|_| {
                if rng.random_bool(0.5) {
                    one_hot(rng.random_range(0..dim), dim)
                } else {
                    random_simplex_point(dim, rng)
                }
            })
            .collect();
        let mean: Vec<f64> = (0..dim)
            .map(|c| actions.iter().map(|a| a[c]).sum::<f64>() / count as f64)
            .collect();
        let grad = probe.gradient_at(&mean);

        let mut first_order = 0.0;
        let mut expansion = 0.0;
        let mut exact = 0.0;
        for a in &actions {
            let delta: Vec<f64> = a.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let remainder = probe.quadratic_form(&delta);
            let delta_sq = dot(&delta, &delta);
            let pointwise = probe.smoothness() * delta_sq + 1e-12;
            if remainder.abs() > pointwise || remainder.abs() > bound {
                return Err(Error::BoundViolation(format!(
                    "trial {trial}: |R| = {} exceeds bound (M*|d|^2 = {pointwise}, 2M = {bound}); \
                     actions = {actions:?}, mean = {mean:?}",
                    remainder.abs()
                )));
            }
            report.max_abs_remainder = report.max_abs_remainder.max(remainder.abs());
            let lin = dot(&grad, &delta);
            first_order += lin;
            expansion += lin + 0.5 * remainder;
            exact += probe.value(a);
        }
        let n = count as f64;
        let residual = (exact / n - probe.value(&mean) - expansion / n).abs();
        report.max_first_order = report.max_first_order.max(first_order.abs());
        report.max_taylor_residual = report.max_taylor_residual.max(residual);
        if first_order.abs() > FIRST_ORDER_TOL {
            return Err(Error::BoundViolation(format!(
                "trial {trial}: first-order term {first_order} does not vanish; actions = {actions:?}"
            )));
        }
        if residual > TAYLOR_TOL {
            return Err(Error::BoundViolation(format!(
                "trial {trial}: Taylor identity residual {residual}; actions = {actions:?}"
            )));
        }
    }
    Ok(report)
}

fn random_simplex_point<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|_| -rng.random_range(f64::EPSILON..1.0).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}
