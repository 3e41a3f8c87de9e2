use std::io::{BufRead, Write};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::features::{center_crop, FeatureSource, Label, ManifestEntry};
use crate::mhfa::{bind_params, classify, pool_utterance, stack_rows, MhfaConfig, MhfaParams};

const SCORE_CHUNK: usize = 16;

/// One scored utterance. Higher scores mean more bonafide.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub label: Label,
    pub generator: String,
    /// `logit(bonafide) - logit(spoof)`.
    pub score: f64,
}

/// Eval-mode scores for `entries`, each centre-cropped (or wrap-padded) to
/// `eval_frames`.
pub fn score_dataset(
    params: &MhfaParams<f32>,
    cfg: &MhfaConfig,
    entries: &[ManifestEntry],
    source: &dyn FeatureSource,
    eval_frames: usize,
) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::with_capacity(entries.len());
    for chunk in entries.chunks(SCORE_CHUNK) {
        let mut g = Graph::<f32>::new();
        let pv = bind_params(&mut g, params, false);
        let mut pooled = Vec::with_capacity(chunk.len());
        for entry in chunk {
            let stack = source.load(entry)?;
            if stack.layers() != cfg.layers || stack.dim() != cfg.dim {
                return Err(Error::dim(
                    format!("utterance {}", entry.utt_id),
                    format!(
                        "features are {}x{}x{}, model expects {} layers of dim {}",
                        stack.layers(),
                        stack.frames(),
                        stack.dim(),
                        cfg.layers,
                        cfg.dim
                    ),
                ));
            }
            let stack = center_crop(&stack, eval_frames);
            let x = g.constant(stack.to_tensor());
            pooled.push(pool_utterance(&mut g, cfg, &pv, x, None)?.0);
        }
        let rows = stack_rows(&mut g, &pooled)?;
        let (_, logits) = classify(&mut g, &pv, rows)?;
        let l = g.value(logits).data();
        for (k, entry) in chunk.iter().enumerate() {
            out.push(ScoreRecord {
                utt_id: entry.utt_id.clone(),
                label: entry.label,
                generator: entry.generator.clone(),
                score: l[2 * k + 1] as f64 - l[2 * k] as f64,
            });
        }
    }
    Ok(out)
}

/// `utt_id label generator score`, one line per utterance, score with nine
/// significant digits.
pub fn write_score_file<W: Write>(records: &[ScoreRecord], mut dest: W) -> Result<()> {
    for r in records {
        writeln!(
            dest,
            "{} {} {} {:.8e}",
            r.utt_id,
            r.label.as_str(),
            r.generator,
            r.score
        )?;
    }
    dest.flush()?;
    Ok(())
}

pub fn read_score_file<R: BufRead>(src: R) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (i, line) in src.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let &[utt_id, label, generator, score] = fields.as_slice() else {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        };
        let label = Label::parse(label).ok_or_else(|| bad(format!("unknown label {label:?}")))?;
        let score: f64 = score.parse().map_err(|_| bad(format!("bad score {score:?}")))?;
        if !score.is_finite() {
            return Err(bad("score must be finite".into()));
        }
        out.push(ScoreRecord {
            utt_id: utt_id.to_string(),
            label,
            generator: generator.to_string(),
            score,
        });
    }
    Ok(out)
}
