use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Worst disagreement between autodiff and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the gradient of the scalar built by `f` with respect to every
/// element of `inputs` against `(f(x + eps) − f(x − eps)) / 2eps`.
/// Relative errors use `max(|autodiff|, |numeric|, 1e-6)` as denominator.
/// Each evaluation gets a fresh graph with the same `training` flag and seed,
/// so dropout masks repeat.
pub fn gradcheck<F>(inputs: &[Tensor], eps: f64, training: bool, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(training, 0);
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new(training, 0);
    let vars: Vec<Var> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let mut xs = inputs.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
    };
    for (k, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = inputs[k].data()[i];
            xs[k].data_mut()[i] = orig + eps;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = orig - eps;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite difference at input {k}[{i}]"
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
