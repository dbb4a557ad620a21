//! Finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `|a − n| / max(1e-7, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-7)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let (max_rel_err, worst) = if other.max_rel_err > self.max_rel_err {
            (other.max_rel_err, other.worst)
        } else {
            (self.max_rel_err, self.worst)
        };
        GradCheckReport {
            max_rel_err,
            worst,
            checked: self.checked + other.checked,
        }
    }
}

/// Fixed projection weights that turn a tensor-valued output into a scalar
/// with a non-degenerate gradient.
fn projection(numel: usize) -> Tensor {
    Tensor::from_fn(&[numel], |i| (0.7 * i as f64 + 0.3).cos())
}

fn scalarize<'t>(out: Var<'t>) -> Result<Var<'t>> {
    let numel = out.value().numel();
    if numel == 1 {
        return Ok(out);
    }
    let weights = out.tape().constant(projection(numel));
    out.reshape(&[numel])?.mul(&weights).map(|v| v.sum())
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    Ok(scalarize(f(&tape, &vars)?)?.item())
}

/// Compares reverse-mode gradients of `f` with central differences of step
/// `h` for every element of every input. Non-scalar outputs are contracted
/// with fixed weights first.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    grad_check_sampled(f, inputs, h, usize::MAX)
}

/// Like [`grad_check`], but probes at most `per_input` evenly spaced elements
/// of each input.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    per_input: usize,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = scalarize(f(&tape, &vars)?)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        let numel = grad.numel();
        let stride = numel.div_ceil(per_input.min(numel).max(1));
        for at in (0..numel).step_by(stride.max(1)) {
            let original = probe[which].data()[at];
            probe[which].data_mut()[at] = original + h;
            let plus = evaluate(&f, &probe)?;
            probe[which].data_mut()[at] = original - h;
            let minus = evaluate(&f, &probe)?;
            probe[which].data_mut()[at] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[at], numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((which, at));
            }
        }
    }
    Ok(report)
}
