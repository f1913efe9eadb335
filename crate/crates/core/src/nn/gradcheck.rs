//! Central finite-difference verification of analytic gradients.

use super::Parameterized;

/// `(f(x + h) - f(x - h)) / 2h` for a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |numeric|)` seen.
    pub max_rel_error: f64,
    /// Block name and flat index where the largest error occurred.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.tolerance
    }
}

/// Compares analytic gradients against central differences for every
/// parameter entry of `model`.
///
/// `loss` must return the scalar loss and accumulate analytic gradients into
/// the model's grad buffers; grads are zeroed before each call.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, h: f64, tolerance: f64) -> GradCheckReport
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M) -> f64,
{
    model.zero_grad();
    loss(model);
    let analytic: Vec<Vec<f64>> = model.blocks().iter().map(|b| b.grads().to_vec()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        tolerance,
    };

    for (bi, grads) in analytic.iter().enumerate() {
        for (idx, &a) in grads.iter().enumerate() {
            let original = model.blocks()[bi].values()[idx];

            model.blocks_mut()[bi].values_mut()[idx] = original + h;
            model.zero_grad();
            let plus = loss(model);

            model.blocks_mut()[bi].values_mut()[idx] = original - h;
            model.zero_grad();
            let minus = loss(model);

            model.blocks_mut()[bi].values_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((model.blocks()[bi].name().to_string(), idx));
                report.analytic_at_worst = a;
                report.numeric_at_worst = numeric;
            }
        }
    }
    model.zero_grad();
    report
}
