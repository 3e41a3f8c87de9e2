use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, element index) of the worst disagreement.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Multiplies one analytic gradient entry before comparison; used to prove the
/// checker actually catches a wrong gradient.
#[derive(Clone, Copy, Debug)]
pub struct GradFault {
    pub param: usize,
    pub element: usize,
    pub factor: f64,
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `eps`, returning the max of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with_fault(f, params, eps, None)
}

pub fn grad_check_with_fault<F>(
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
    fault: Option<GradFault>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Contract(format!("eps must be positive, got {eps}")));
    }

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        g.value(loss)
            .item()
            .ok_or_else(|| Error::Contract("grad_check loss must be scalar".into()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;
    let mut analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| grads.take(v).expect("params are trainable leaves"))
        .collect();
    if let Some(fault) = fault {
        let cell = analytic
            .get_mut(fault.param)
            .and_then(|t| t.data_mut().get_mut(fault.element))
            .ok_or_else(|| Error::Contract("fault index out of range".into()))?;
        *cell *= fault.factor;
    }

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for p in 0..params.len() {
        for e in 0..params[p].numel() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + eps;
            let plus = eval(&work)?;
            work[p].data_mut()[e] = orig - eps;
            let minus = eval(&work)?;
            work[p].data_mut()[e] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check loss at parameter {p} element {e}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (p, e);
            }
        }
    }
    Ok(report)
}
