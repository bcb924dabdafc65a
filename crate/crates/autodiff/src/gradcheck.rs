//! Central finite-difference gradient checking.

use crate::error::AutodiffError;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Norm-wise relative error per input tensor.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences with step `h`, for every tensor in `inputs`.
///
/// The error for an input is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-10)`
/// using Euclidean norms over the whole tensor.
pub fn check<F, E>(inputs: &[Tensor], h: f64, f: F) -> std::result::Result<GradCheck, E>
where
    F: Fn(&mut Graph, &[Var]) -> std::result::Result<Var, E>,
    E: From<AutodiffError>,
{
    let eval = |values: &[Tensor]| -> std::result::Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].shape());
        let mut diff2 = 0.0;
        let mut num2 = 0.0;
        for k in 0..inputs[i].numel() {
            let x = inputs[i].data()[k];
            work[i].data_mut()[k] = x + h;
            let up = eval(&work)?;
            work[i].data_mut()[k] = x - h;
            let down = eval(&work)?;
            work[i].data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            diff2 += (a - numeric) * (a - numeric);
            num2 += numeric * numeric;
        }
        let denom = analytic.norm().max(num2.sqrt()).max(1e-10);
        relative_errors.push(diff2.sqrt() / denom);
    }
    Ok(GradCheck { relative_errors })
}
