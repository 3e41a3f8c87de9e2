//! Synthetic layered features with per-generator artifacts.
//!
//! Bonafide layer `l` is `s · M_l + noise`, where `s` is a smooth `T × latent_dim`
//! latent (unit-variance AR(1) walk over time, drawn per utterance) and `M_l` is
//! a fixed random mixing map. A spoof from generator `g` starts from the same
//! process; on the artifact layer band its per-channel deviations around the
//! time mean are scaled by `1 + stats_shift_scale · u_g` and the unit vector
//! `artifact_amplitude · a_g` is added to every frame.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_feature_stack, write_manifest, FeatureSource, FeatureStack, Label, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::seed::{rng_for, Rng};
use crate::tensor::Tensor;

const MAX_COSINE: f64 = 0.5;
const MAX_DIRECTION_ATTEMPTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub layers: usize,
    /// Frames per utterance before cropping.
    pub frames: usize,
    pub dim: usize,
    pub latent_dim: usize,
    /// AR(1) coefficient of the latent walk, in `[0, 1)`.
    pub latent_smoothness: f64,
    pub noise_std: f64,
    pub n_train_per_class: usize,
    /// Per class, for each of dev, eval_seen and eval_unseen.
    pub n_eval_per_class: usize,
    pub seen_generators: usize,
    pub unseen_generators: usize,
    pub artifact_amplitude: f64,
    /// Half-open layer range `[start, end)` that carries the artifacts.
    pub artifact_layer_band: [usize; 2],
    pub stats_shift_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            frames: 300,
            dim: 128,
            latent_dim: 32,
            latent_smoothness: 0.95,
            noise_std: 0.1,
            n_train_per_class: 400,
            n_eval_per_class: 100,
            seen_generators: 2,
            unseen_generators: 2,
            artifact_amplitude: 0.5,
            artifact_layer_band: [3, 6],
            stats_shift_scale: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("frames", self.frames),
            ("dim", self.dim),
            ("latent_dim", self.latent_dim),
            ("n_train_per_class", self.n_train_per_class),
            ("n_eval_per_class", self.n_eval_per_class),
            ("seen_generators", self.seen_generators),
            ("unseen_generators", self.unseen_generators),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth.{name} must be at least 1")));
        }
        let [lo, hi] = self.artifact_layer_band;
        if lo >= hi || hi > self.layers {
            return Err(Error::Config(format!(
                "synth.artifact_layer_band [{lo}, {hi}) must be a non-empty range within [0, {})",
                self.layers
            )));
        }
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !non_negative(self.artifact_amplitude)
            || !non_negative(self.stats_shift_scale)
            || !non_negative(self.noise_std)
        {
            return Err(Error::Config("synth amplitudes and noise must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.latent_smoothness) {
            return Err(Error::Config("synth.latent_smoothness must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub id: String,
    pub seen: bool,
    /// Unit-norm artifact direction.
    pub direction: Vec<f32>,
    /// `u_g` in `(-1, 1)`.
    pub stats_shift: f64,
}

/// A synthetic dataset whose utterances are generated on demand from
/// `(seed, utt_id)`, so the full corpus never has to be resident.
pub struct SynthDataset {
    cfg: SynthConfig,
    mixing: Vec<Tensor<f32>>,
    generators: Vec<Generator>,
    entries: Vec<ManifestEntry>,
}

fn unit_gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

impl SynthDataset {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;

        let mut rng = rng_for(cfg.seed, "synth.mixing");
        let std = (1.0 / cfg.latent_dim as f64).sqrt();
        let mixing = (0..cfg.layers)
            .map(|_| {
                let data = (0..cfg.latent_dim * cfg.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (std * z) as f32
                    })
                    .collect();
                Tensor::new(vec![cfg.latent_dim, cfg.dim], data).expect("positive extents")
            })
            .collect();

        let mut rng = rng_for(cfg.seed, "synth.generators");
        let total = cfg.seen_generators + cfg.unseen_generators;
        let mut generators: Vec<Generator> = Vec::with_capacity(total);
        for g in 0..total {
            let mut attempts = 0;
            let direction = loop {
                attempts += 1;
                if attempts > MAX_DIRECTION_ATTEMPTS {
                    return Err(Error::Config(format!(
                        "could not draw {total} artifact directions with |cos| < {MAX_COSINE} in dim {}",
                        cfg.dim
                    )));
                }
                let cand: Vec<f32> = unit_gaussian(&mut rng, cfg.dim).into_iter().map(|v| v as f32).collect();
                if generators
                    .iter()
                    .all(|h| cosine(&cand, &h.direction).abs() < MAX_COSINE)
                {
                    break cand;
                }
            };
            generators.push(Generator {
                id: format!("G{:02}", g + 1),
                seen: g < cfg.seen_generators,
                direction,
                stats_shift: rng.random_range(-1.0..1.0),
            });
        }

        let mut entries = Vec::new();
        for split in Split::ALL {
            let (n, pool): (usize, Vec<&Generator>) = match split {
                Split::Train => (cfg.n_train_per_class, generators.iter().filter(|g| g.seen).collect()),
                Split::Dev | Split::EvalSeen => (cfg.n_eval_per_class, generators.iter().filter(|g| g.seen).collect()),
                Split::EvalUnseen => (cfg.n_eval_per_class, generators.iter().filter(|g| !g.seen).collect()),
            };
            for i in 0..n {
                for (k, label) in [Label::Bonafide, Label::Spoof].into_iter().enumerate() {
                    let utt_id = format!("{}_{:05}", split.as_str(), 2 * i + k);
                    let generator = match label {
                        Label::Bonafide => "-".to_string(),
                        Label::Spoof => pool[i % pool.len()].id.clone(),
                    };
                    entries.push(ManifestEntry {
                        path: format!("feats/{utt_id}.esdf"),
                        utt_id,
                        label,
                        generator,
                        split,
                    });
                }
            }
        }

        Ok(Self {
            cfg,
            mixing,
            generators,
            entries,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).cloned().collect()
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn max_abs_cosine(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.generators.iter().enumerate() {
            for b in &self.generators[i + 1..] {
                worst = worst.max(cosine(&a.direction, &b.direction).abs());
            }
        }
        worst
    }

    pub fn generate(&self, entry: &ManifestEntry) -> Result<FeatureStack> {
        let cfg = &self.cfg;
        let generator = match entry.label {
            Label::Bonafide => None,
            Label::Spoof => Some(
                self.generators
                    .iter()
                    .find(|g| g.id == entry.generator)
                    .ok_or_else(|| Error::Integrity(format!("unknown generator {}", entry.generator)))?,
            ),
        };
        let mut rng = rng_for(cfg.seed, &format!("synth.utt.{}", entry.utt_id));
        let (t_len, d, k) = (cfg.frames, cfg.dim, cfg.latent_dim);

        let rho = cfg.latent_smoothness;
        let innov = (1.0 - rho * rho).sqrt();
        let mut latent = vec![0f32; t_len * k];
        for t in 0..t_len {
            for j in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                latent[t * k + j] = if t == 0 {
                    z as f32
                } else {
                    (rho * latent[(t - 1) * k + j] as f64 + innov * z) as f32
                };
            }
        }

        let mut values = Vec::with_capacity(cfg.layers * t_len * d);
        for (l, mix) in self.mixing.iter().enumerate() {
            let mut layer = vec![0f32; t_len * d];
            <f32 as crate::tensor::Scalar>::gemm_acc(t_len, k, d, &latent, mix.data(), &mut layer);
            for v in layer.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += (cfg.noise_std * z) as f32;
            }
            let [lo, hi] = cfg.artifact_layer_band;
            if let (Some(g), true) = (generator, (lo..hi).contains(&l)) {
                let gain = 1.0 + cfg.stats_shift_scale * g.stats_shift;
                for c in 0..d {
                    let mean = (0..t_len).map(|t| layer[t * d + c] as f64).sum::<f64>() / t_len as f64;
                    let shift = cfg.artifact_amplitude * g.direction[c] as f64;
                    for t in 0..t_len {
                        let v = &mut layer[t * d + c];
                        *v = (mean + (*v as f64 - mean) * gain + shift) as f32;
                    }
                }
            }
            values.extend_from_slice(&layer);
        }
        FeatureStack::new(cfg.layers, t_len, d, values)
    }
}

impl FeatureSource for SynthDataset {
    fn load(&self, entry: &ManifestEntry) -> Result<FeatureStack> {
        self.generate(entry)
    }
}

/// Writes `manifest.jsonl` and one ESDF file per utterance under `out_dir`.
pub fn synthesize_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthDataset> {
    let ds = SynthDataset::new(cfg.clone())?;
    fs::create_dir_all(out_dir.join("feats"))?;
    for entry in ds.entries() {
        let stack = ds.generate(entry)?;
        let file = BufWriter::new(File::create(out_dir.join(&entry.path))?);
        write_feature_stack(&stack, file)?;
    }
    let mut manifest = BufWriter::new(File::create(out_dir.join("manifest.jsonl"))?);
    write_manifest(ds.entries(), &mut manifest)?;
    manifest.flush()?;
    Ok(ds)
}
