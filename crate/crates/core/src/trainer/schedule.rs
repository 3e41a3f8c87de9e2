use std::f64::consts::PI;

use super::TrainConfig;
use crate::mhfa::{MhfaParams, ParamGroup};
use crate::tensor::Scalar;

/// Learning rate for optimizer step `step` (0-based).
///
/// Warmup climbs linearly as `base · (step + 1) / (warmup_steps + 1)`, so it
/// stays strictly below `base` and reaches it at `step == warmup_steps`, where
/// the cosine segment starts. The cosine segment ends at exactly `final_lr`.
pub fn lr_at_step(step: usize, total_steps: usize, warmup_steps: usize, cfg: &TrainConfig) -> f64 {
    if step < warmup_steps {
        return cfg.base_lr * (step + 1) as f64 / (warmup_steps + 1) as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1);
    let progress = ((step - warmup_steps) as f64 / span as f64).min(1.0);
    let w = 0.5 * (1.0 + (PI * progress).cos());
    cfg.base_lr * w + cfg.final_lr * (1.0 - w)
}

/// Parameter indices (registry order) split into back-end and front-end.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroups {
    pub backend: Vec<usize>,
    pub frontend: Vec<usize>,
    pub frontend_scale: f64,
}

impl ParamGroups {
    /// Per-parameter learning rates for a scheduled rate `lr`.
    pub fn rates(&self, lr: f64) -> Vec<f64> {
        let n = self.backend.len() + self.frontend.len();
        let mut out = vec![lr; n];
        for &i in &self.frontend {
            out[i] = lr * self.frontend_scale;
        }
        out
    }

    pub fn frontend_scalars<T: Scalar>(&self, params: &MhfaParams<T>) -> usize {
        let tensors = params.tensors();
        self.frontend.iter().map(|&i| tensors[i].numel()).sum()
    }
}

pub fn build_param_groups<T: Scalar>(params: &MhfaParams<T>, cfg: &TrainConfig) -> ParamGroups {
    let mut groups = ParamGroups {
        backend: Vec::new(),
        frontend: Vec::new(),
        frontend_scale: cfg.frontend_lr_scale,
    };
    for (i, g) in params.groups().into_iter().enumerate() {
        match g {
            ParamGroup::Backend => groups.backend.push(i),
            ParamGroup::Frontend => groups.frontend.push(i),
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhfa::MhfaConfig;
    use crate::seed::rng_for;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn warmup_end_and_final_step_are_exact() {
        let (total, warmup) = (56, 14);
        assert_eq!(lr_at_step(warmup, total, warmup, &cfg()), 5e-4);
        assert_eq!(lr_at_step(total, total, warmup, &cfg()), 1e-5);
        assert!(lr_at_step(warmup - 1, total, warmup, &cfg()) < 5e-4);
    }

    #[test]
    fn cosine_midpoint() {
        let lr = lr_at_step(10 + 50, 110, 10, &cfg());
        assert!((lr - 2.55e-4).abs() < 1e-18, "{lr}");
    }

    #[test]
    fn warmup_rises_and_cosine_falls() {
        let (total, warmup) = (200, 50);
        let lrs: Vec<f64> = (0..=total).map(|s| lr_at_step(s, total, warmup, &cfg())).collect();
        for s in 0..warmup {
            assert!(lrs[s] < lrs[s + 1]);
            assert!(lrs[s] > 0.0);
        }
        for s in warmup..total {
            assert!(lrs[s + 1] <= lrs[s]);
        }
        // The step into the cosine segment is no larger than one warmup increment.
        assert!(lrs[warmup] - lrs[warmup - 1] <= 5e-4 / (warmup + 1) as f64 + 1e-18);
    }

    #[test]
    fn no_warmup() {
        assert_eq!(lr_at_step(0, 10, 0, &cfg()), 5e-4);
    }

    #[test]
    fn groups_follow_adapter() {
        let mut m = MhfaConfig {
            layers: 4,
            dim: 32,
            heads: 2,
            compression_dim: 4,
            embed_dim: 3,
            ..MhfaConfig::default()
        };
        let p = MhfaParams::<f32>::init(&m, &mut rng_for(0, "init"));
        let g = build_param_groups(&p, &cfg());
        assert_eq!(g.frontend_scalars(&p), 2 * 4 * 32);
        assert_eq!(g.backend.len(), 10);

        m.adapter_enabled = false;
        let p = MhfaParams::<f32>::init(&m, &mut rng_for(0, "init"));
        let g = build_param_groups(&p, &cfg());
        assert!(g.frontend.is_empty());
        assert_eq!(g.backend.len(), p.tensors().len());
    }

    #[test]
    fn frontend_ratio_holds_over_schedule() {
        let m = MhfaConfig {
            layers: 2,
            dim: 3,
            heads: 2,
            compression_dim: 2,
            embed_dim: 2,
            ..MhfaConfig::default()
        };
        let p = MhfaParams::<f32>::init(&m, &mut rng_for(0, "init"));
        let g = build_param_groups(&p, &cfg());
        for step in 0..=56 {
            let rates = g.rates(lr_at_step(step, 56, 14, &cfg()));
            let ratio = rates[g.frontend[0]] / rates[g.backend[0]];
            assert!((ratio - 0.05).abs() <= 2.0 * f64::EPSILON * 0.05, "{step}: {ratio}");
        }
    }
}
