//! Run configuration: one JSON document, layered as defaults < config file <
//! `--seed` < dotted section overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use esdd_core::{FusionSpec, MhfaConfig, SynthConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub workdir: PathBuf,
    /// Defaults to `<workdir>/data/manifest.jsonl`.
    pub manifest: Option<PathBuf>,
    /// Defaults to `<workdir>/best.ckpt`, falling back to `final.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into `synth.seed` and `train.seed`; each module derives its own
    /// streams from it by purpose tag.
    pub seed: u64,
    pub synth: SynthConfig,
    pub model: MhfaConfig,
    pub train: TrainConfig,
    pub fusion: FusionSpec,
    pub paths: Paths,
}

/// A `--section.key value` flag that failed to resolve; reported as a usage
/// error rather than a module error.
#[derive(Debug)]
pub struct UnknownKey(pub String);

impl std::fmt::Display for UnknownKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown configuration key --{}", self.0)
    }
}

impl std::error::Error for UnknownKey {}

pub struct Layers<'a> {
    pub file: Option<&'a Path>,
    pub seed: Option<u64>,
    pub workdir: Option<&'a Path>,
    pub overrides: &'a [(String, String)],
}

impl RunConfig {
    pub fn resolve(layers: Layers) -> Result<Self> {
        let defaults = serde_json::to_value(RunConfig {
            paths: Paths {
                workdir: PathBuf::from("run"),
                ..Paths::default()
            },
            ..RunConfig::default()
        })?;
        let mut doc = defaults.clone();
        if let Some(path) = layers.file {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let file: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut doc, file);
        }
        if let Some(seed) = layers.seed {
            doc["seed"] = seed.into();
        }
        let seed = doc["seed"].clone();
        doc["synth"]["seed"] = seed.clone();
        doc["train"]["seed"] = seed;
        if let Some(w) = layers.workdir {
            doc["paths"]["workdir"] = Value::String(w.display().to_string());
        }
        for (key, raw) in layers.overrides {
            set_dotted(&mut doc, &defaults, key, raw)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).context("invalid configuration")?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        cfg.synth.validate()?;
        Ok(cfg)
    }

    pub fn workdir(&self) -> &Path {
        &self.paths.workdir
    }

    pub fn manifest(&self) -> PathBuf {
        self.paths
            .manifest
            .clone()
            .unwrap_or_else(|| self.workdir().join("data").join("manifest.jsonl"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        if let Some(p) = &self.paths.checkpoint {
            return p.clone();
        }
        let best = self.workdir().join("best.ckpt");
        if best.exists() {
            best
        } else {
            self.workdir().join("final.ckpt")
        }
    }

    /// Writes the resolved configuration to `<workdir>/config.json`.
    pub fn archive(&self) -> Result<()> {
        fs::create_dir_all(self.workdir()).with_context(|| format!("creating workdir {}", self.workdir().display()))?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(self.workdir().join("config.json"), text)?;
        Ok(())
    }
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}

/// Values parse as JSON when they can (`5e-4`, `true`, `[3,6]`) and as plain
/// strings otherwise.
fn set_dotted(doc: &mut Value, schema: &Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        bail!(UnknownKey(key.to_string()));
    }
    let mut node = schema;
    for p in &parts {
        node = match node {
            Value::Object(m) if m.contains_key(*p) => &m[*p],
            _ => bail!(UnknownKey(key.to_string())),
        };
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    for p in &parts[..parts.len() - 1] {
        if !slot.get(*p).is_some_and(Value::is_object) {
            slot[*p] = Value::Object(Map::new());
        }
        slot = &mut slot[*p];
    }
    slot[parts[parts.len() - 1]] = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers<'a>(overrides: &'a [(String, String)]) -> Layers<'a> {
        Layers {
            file: None,
            seed: None,
            workdir: None,
            overrides,
        }
    }

    #[test]
    fn dotted_overrides_apply() {
        let o = vec![
            ("train.base_lr".to_string(), "0.001".to_string()),
            ("synth.artifact_layer_band".to_string(), "[1,2]".to_string()),
            ("paths.checkpoint".to_string(), "x.ckpt".to_string()),
        ];
        let cfg = RunConfig::resolve(layers(&o)).unwrap();
        assert_eq!(cfg.train.base_lr, 0.001);
        assert_eq!(cfg.synth.artifact_layer_band, [1, 2]);
        assert_eq!(cfg.paths.checkpoint, Some(PathBuf::from("x.ckpt")));
    }

    #[test]
    fn unknown_key_is_flagged() {
        let o = vec![("train.learning_rate".to_string(), "1".to_string())];
        let err = RunConfig::resolve(layers(&o)).unwrap_err();
        assert!(err.downcast_ref::<UnknownKey>().is_some());
    }

    #[test]
    fn seed_reaches_sections_unless_overridden() {
        let cfg = RunConfig::resolve(Layers {
            seed: Some(9),
            ..layers(&[])
        })
        .unwrap();
        assert_eq!((cfg.synth.seed, cfg.train.seed), (9, 9));
        let o = vec![("synth.seed".to_string(), "4".to_string())];
        let cfg = RunConfig::resolve(Layers {
            seed: Some(9),
            ..layers(&o)
        })
        .unwrap();
        assert_eq!((cfg.synth.seed, cfg.train.seed), (4, 9));
    }
}
