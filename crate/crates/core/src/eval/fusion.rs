use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ScoreRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    #[default]
    None,
    /// Per-system mean 0, population std 1.
    Zscore,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSpec {
    /// Score files, one per system.
    pub systems: Vec<String>,
    /// Empty means equal weights.
    pub weights: Vec<f64>,
    pub normalize: Normalize,
}

impl FusionSpec {
    pub fn resolved_weights(&self, n_systems: usize) -> Result<Vec<f64>> {
        if self.weights.is_empty() {
            return Ok(vec![1.0; n_systems]);
        }
        if self.weights.len() != n_systems {
            return Err(Error::Config(format!(
                "{} fusion weights for {n_systems} systems",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || self.weights.iter().all(|&w| w == 0.0) {
            return Err(Error::Config(
                "fusion weights must be finite with at least one nonzero".into(),
            ));
        }
        if sorted_sum(self.weights.clone()) == 0.0 {
            return Err(Error::Config("fusion weights must not sum to zero".into()));
        }
        Ok(self.weights.clone())
    }
}

/// Order-independent sum: terms are added in ascending order.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn znorm(records: &[ScoreRecord]) -> Vec<f64> {
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.score).sum::<f64>() / n;
    let std = (records.iter().map(|r| (r.score - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { std } else { 1.0 };
    records.iter().map(|r| (r.score - mean) / scale).collect()
}

/// Weighted mean of per-system scores, aligned by utterance id. Output follows
/// the order of the first system.
pub fn fuse_scores(spec: &FusionSpec, sets: &[Vec<ScoreRecord>]) -> Result<Vec<ScoreRecord>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Config("fusion needs at least one system".into()))?;
    let weights = spec.resolved_weights(sets.len())?;

    let mut lookups = Vec::with_capacity(sets.len());
    for (k, set) in sets.iter().enumerate() {
        let mut map = HashMap::with_capacity(set.len());
        for (i, r) in set.iter().enumerate() {
            if map.insert(r.utt_id.as_str(), i).is_some() {
                return Err(Error::Integrity(format!("system {k} scores {} twice", r.utt_id)));
            }
        }
        lookups.push(map);
    }
    let mut missing = BTreeSet::new();
    for (k, map) in lookups.iter().enumerate().skip(1) {
        for r in first {
            if !map.contains_key(r.utt_id.as_str()) {
                missing.insert(r.utt_id.clone());
            }
        }
        for r in &sets[k] {
            if !lookups[0].contains_key(r.utt_id.as_str()) {
                missing.insert(r.utt_id.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment(missing.into_iter().collect()));
    }

    let normalized: Vec<Vec<f64>> = sets
        .iter()
        .map(|set| match spec.normalize {
            Normalize::None => set.iter().map(|r| r.score).collect(),
            Normalize::Zscore => znorm(set),
        })
        .collect();
    let weight_sum = sorted_sum(weights.clone());

    first
        .iter()
        .map(|r| {
            let mut terms = Vec::with_capacity(sets.len());
            for (k, set) in sets.iter().enumerate() {
                let j = lookups[k][r.utt_id.as_str()];
                if set[j].label != r.label {
                    return Err(Error::Integrity(format!("label disagreement for {}", r.utt_id)));
                }
                terms.push(weights[k] * normalized[k][j]);
            }
            Ok(ScoreRecord {
                score: sorted_sum(terms) / weight_sum,
                ..r.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Label;

    fn set(scores: &[(&str, Label, f64)]) -> Vec<ScoreRecord> {
        scores
            .iter()
            .map(|&(id, label, score)| ScoreRecord {
                utt_id: id.into(),
                label,
                generator: "-".into(),
                score,
            })
            .collect()
    }

    #[test]
    fn hand_averaged() {
        let a = set(&[("u1", Label::Bonafide, 2.0), ("u2", Label::Spoof, 4.0)]);
        let b = set(&[("u2", Label::Spoof, 2.0), ("u1", Label::Bonafide, 0.0)]);
        let fused = fuse_scores(&FusionSpec::default(), &[a, b]).unwrap();
        assert_eq!(fused.iter().map(|r| r.score).collect::<Vec<_>>(), vec![1.0, 3.0]);
    }

    #[test]
    fn zero_weight_projects_onto_first_system() {
        let a = set(&[("u1", Label::Bonafide, 0.123), ("u2", Label::Spoof, -7.5)]);
        let b = set(&[("u1", Label::Bonafide, 9.0), ("u2", Label::Spoof, 1.0)]);
        let spec = FusionSpec {
            weights: vec![1.0, 0.0],
            ..FusionSpec::default()
        };
        assert_eq!(fuse_scores(&spec, &[a.clone(), b]).unwrap(), a);
    }

    #[test]
    fn missing_ids_are_listed() {
        let a = set(&[("u1", Label::Bonafide, 1.0), ("u2", Label::Spoof, 0.0)]);
        let b = set(&[("u1", Label::Bonafide, 1.0), ("u3", Label::Spoof, 0.0)]);
        match fuse_scores(&FusionSpec::default(), &[a, b]) {
            Err(Error::Alignment(ids)) => assert_eq!(ids, vec!["u2".to_string(), "u3".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_disagreement() {
        let a = set(&[("u1", Label::Bonafide, 1.0)]);
        let b = set(&[("u1", Label::Spoof, 1.0)]);
        assert!(matches!(
            fuse_scores(&FusionSpec::default(), &[a, b]),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn zscore_normalizes_each_system() {
        let a = set(&[("u1", Label::Bonafide, 10.0), ("u2", Label::Spoof, 20.0)]);
        let spec = FusionSpec {
            normalize: Normalize::Zscore,
            ..FusionSpec::default()
        };
        let fused = fuse_scores(&spec, &[a]).unwrap();
        assert_eq!(fused.iter().map(|r| r.score).collect::<Vec<_>>(), vec![-1.0, 1.0]);
    }

    #[test]
    fn bad_weights() {
        let a = set(&[("u1", Label::Bonafide, 1.0)]);
        let spec = FusionSpec {
            weights: vec![0.0],
            ..FusionSpec::default()
        };
        assert!(matches!(
            fuse_scores(&spec, std::slice::from_ref(&a)),
            Err(Error::Config(_))
        ));
        let spec = FusionSpec {
            weights: vec![1.0, 1.0],
            ..FusionSpec::default()
        };
        assert!(matches!(fuse_scores(&spec, &[a]), Err(Error::Config(_))));
    }
}
