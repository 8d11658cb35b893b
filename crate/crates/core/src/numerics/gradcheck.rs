use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Result of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&g, &vars)?;
    out.item().ok_or_else(|| Error::NonScalarLoss(out.shape()))
}

/// Check every element of every parameter of `f` against the central
/// difference `(f(θ+eps) − f(θ−eps)) / (2·eps)`.
///
/// `f` receives one graph leaf per entry of `params`, in order, and must
/// return a scalar.
pub fn grad_check<F>(params: &mut [Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let analytic: Vec<Tensor> = {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| g.param(p)).collect();
        let out = f(&g, &vars)?;
        g.backward(out)?;
        vars.iter().map(|&v| g.grad(v)).collect()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].numel() {
            let orig = params[pi].data()[ei];
            params[pi].data_mut()[ei] = orig + eps;
            let plus = eval_scalar(&f, params);
            params[pi].data_mut()[ei] = orig - eps;
            let minus = eval_scalar(&f, params);
            params[pi].data_mut()[ei] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic[pi].data()[ei];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((pi, ei));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
