use alloc::vec::Vec;

use super::{AutodiffError, Graph, Tensor, Var};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_abs_err: f64,
    /// Largest relative error among entries whose absolute error exceeds `abs_floor`.
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Check `d f / d inputs` for a scalar-valued `f` built on a fresh graph.
///
/// An entry passes when its absolute error is at most `abs_floor` or its
/// relative error is at most `rel_tol`.
pub fn gradcheck<F>(inputs: &[Tensor], h: f64, rel_tol: f64, abs_floor: f64, f: F) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |ts: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        passed: true,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let x0 = inputs[k].data()[i];
            work[k].data_mut()[i] = x0 + h;
            let fp = eval(&work)?;
            work[k].data_mut()[i] = x0 - h;
            let fm = eval(&work)?;
            work[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let abs = (a - numeric).abs();
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs > abs_floor {
                let rel = abs / a.abs().max(numeric.abs());
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel > rel_tol {
                    report.passed = false;
                }
            }
        }
    }
    Ok(report)
}
