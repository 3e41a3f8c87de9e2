//! Shared fixtures for the criterion benchmarks in `benches/`.

use esdd_core::features::{random_crop, SynthDataset};
use esdd_core::seed::rng_for;
use esdd_core::{FeatureStack, Label, MhfaConfig, MhfaParams, Split, SynthConfig};

/// Default-sized model with `n` training crops of `frames` frames.
pub struct Batch {
    pub cfg: MhfaConfig,
    pub params: MhfaParams<f32>,
    pub stacks: Vec<FeatureStack>,
    pub labels: Vec<usize>,
}

pub fn dataset() -> SynthDataset {
    SynthDataset::new(SynthConfig {
        n_train_per_class: 32,
        n_eval_per_class: 8,
        ..SynthConfig::default()
    })
    .expect("default config is valid")
}

pub fn batch(ds: &SynthDataset, n: usize, frames: usize) -> Batch {
    let cfg = MhfaConfig::default();
    let params = MhfaParams::init(&cfg, &mut rng_for(0, "init"));
    let mut rng = rng_for(0, "crop");
    let entries = ds.split(Split::Train);
    let (stacks, labels) = entries
        .iter()
        .take(n)
        .map(|e| {
            let s = ds.generate(e).expect("synthetic entry");
            let y = if e.label == Label::Bonafide { 1 } else { 0 };
            (random_crop(&s, frames, &mut rng), y)
        })
        .unzip();
    Batch {
        cfg,
        params,
        stacks,
        labels,
    }
}
