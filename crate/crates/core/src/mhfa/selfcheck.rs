use rand_distr::{Distribution, StandardNormal};

use super::{classify, nll_loss, pool_utterance, stack_rows, MhfaConfig, MhfaParams, ParamVars};
use crate::autodiff::{grad_check_with_fault, GradCheckReport, GradFault};
use crate::error::Result;
use crate::features::FeatureStack;
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Model size used by [`model_grad_check`]: small enough for central
/// differences over every scalar, with the adapter on and DSU off.
pub fn grad_check_config() -> MhfaConfig {
    MhfaConfig {
        layers: 3,
        dim: 8,
        heads: 4,
        compression_dim: 6,
        embed_dim: 5,
        adapter_enabled: true,
        dsu_enabled: false,
        ..MhfaConfig::default()
    }
}

/// Finite-difference check of the training loss over every model parameter
/// at 64-bit, on a two-utterance batch (one per class) with randomized
/// parameters. `fault` scales one analytic gradient entry first.
pub fn model_grad_check(seed: u64, fault: Option<GradFault>) -> Result<GradCheckReport> {
    let cfg = grad_check_config();
    let mut rng = rng_for(seed, "gradcheck");
    let mut params = MhfaParams::<f64>::init(&cfg, &mut rng);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 0.3 * z;
        }
    }
    let frames = 5;
    let stacks: Vec<FeatureStack> = (0..2)
        .map(|_| {
            let values = (0..cfg.layers * frames * cfg.dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z as f32
                })
                .collect();
            FeatureStack::new(cfg.layers, frames, cfg.dim, values)
        })
        .collect::<Result<_>>()?;
    let labels = [1, 0];
    let tensors: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    let adapter = cfg.adapter_enabled;
    let loss = |g: &mut crate::autodiff::Graph<f64>, vars: &[crate::autodiff::Var]| {
        let pv = ParamVars::from_vars(vars.to_vec(), adapter);
        let mut pooled = Vec::new();
        for s in &stacks {
            let x = g.constant(s.to_tensor());
            pooled.push(pool_utterance(g, &cfg, &pv, x, None)?.0);
        }
        let rows = stack_rows(g, &pooled)?;
        let (_, logits) = classify(g, &pv, rows)?;
        nll_loss(g, logits, &labels)
    };
    grad_check_with_fault(loss, &tensors, 1e-5, fault)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_and_catches_fault() {
        let r = model_grad_check(7, None).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        let n = MhfaParams::<f64>::expected_shapes(&grad_check_config()).len();
        assert_eq!(n, 12);
        let bad = model_grad_check(
            7,
            Some(GradFault {
                param: 6,
                element: 3,
                factor: 2.0,
            }),
        )
        .unwrap();
        assert!(bad.max_rel_error >= 0.3, "{bad:?}");
        assert_eq!(bad.worst, (6, 3));
    }
}
