use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// First and second moments per parameter, kept in 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new<T: Scalar>(params: &[&Tensor<T>]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p`.
///
/// `lrs` holds one learning rate per parameter. A non-finite gradient aborts
/// the step before anything is modified.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    names: &[&str],
    lrs: &[f64],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || lrs.len() != n || names.len() != n || state.m.len() != n {
        return Err(Error::Contract(format!(
            "adamw: {n} params, {} grads, {} rates, {} names, {} moments",
            grads.len(),
            lrs.len(),
            names.len(),
            state.m.len()
        )));
    }
    for i in 0..n {
        if params[i].shape() != grads[i].shape() || state.m[i].len() != params[i].numel() {
            return Err(Error::shape("adamw", params[i].shape(), grads[i].shape()));
        }
        if let Some(e) = grads[i].data().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {} at element {e}", names[i])));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..n {
        let lr = lrs[i];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (p, g)) in params[i].data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            let g = g.as_f64();
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let pre = p.as_f64();
            *p = T::from_f64(pre - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps) - lr * cfg.weight_decay * pre);
        }
    }
    Ok(())
}
