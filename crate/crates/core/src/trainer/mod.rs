//! Optimization: AdamW with two learning-rate groups, warmup plus cosine
//! annealing, and the epoch loop.

mod adamw;
mod fit;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adamw::{adamw_step, OptimizerState};
pub use fit::{batch_gradients, fit, EpochLog, FitOutput, TrainData};
pub use schedule::{build_param_groups, lr_at_step, ParamGroups};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Learning-rate multiplier for the front-end adapter.
    pub frontend_lr_scale: f64,
    pub seed: u64,
    /// Random training crop length in frames.
    pub crop_frames: usize,
    /// Centre crop length used when scoring.
    pub eval_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 8,
            batch_size: 128,
            base_lr: 5e-4,
            final_lr: 1e-5,
            warmup_epochs: 2,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            frontend_lr_scale: 0.05,
            seed: 0,
            crop_frames: 200,
            eval_frames: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.max_epochs == 0 || self.batch_size == 0 || self.crop_frames == 0 || self.eval_frames == 0 {
            return fail("epochs, batch size and crop lengths must be positive".into());
        }
        if !(self.final_lr > 0.0 && self.final_lr <= self.base_lr && self.base_lr.is_finite()) {
            return fail(format!(
                "need 0 < final_lr <= base_lr, got {} and {}",
                self.final_lr, self.base_lr
            ));
        }
        if self.warmup_epochs >= self.max_epochs {
            return fail(format!(
                "warmup_epochs {} must be below max_epochs {}",
                self.warmup_epochs, self.max_epochs
            ));
        }
        if !(self.frontend_lr_scale > 0.0 && self.frontend_lr_scale <= 1.0) {
            return fail(format!("frontend_lr_scale {} outside (0, 1]", self.frontend_lr_scale));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)".into());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return fail("adam_eps must be positive".into());
        }
        Ok(())
    }
}
