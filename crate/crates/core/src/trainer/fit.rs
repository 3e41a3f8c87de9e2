use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{adamw_step, build_param_groups, lr_at_step, OptimizerState, TrainConfig};
use crate::autodiff::Graph;
use crate::dsu::{plan_batch, DsuDraw};
use crate::error::{Error, Result};
use crate::eval::{eer_from_scores, score_dataset};
use crate::features::{random_crop, FeatureSource, FeatureStack, Label, ManifestEntry};
use crate::mhfa::{
    bind_params, classify, nll_loss, pool_utterance, save_checkpoint, stack_rows, value_stream, MhfaConfig, MhfaParams,
    Mode,
};
use crate::seed::rng_for;
use crate::tensor::Tensor;

/// Utterances per autodiff graph; bounds memory without changing results.
const GRAPH_CHUNK: usize = 16;

/// Training and development utterances plus where to read their features.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [ManifestEntry],
    pub dev: &'a [ManifestEntry],
    pub source: &'a dyn FeatureSource,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// `None` when the dev split lacks one of the classes.
    pub dev_eer: Option<f64>,
    /// Rates used by the last step of the epoch.
    pub lr_backend: f64,
    pub lr_frontend: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    pub params: MhfaParams<f32>,
    /// Lowest dev EER seen, earliest epoch on ties.
    pub best: Option<(usize, MhfaParams<f32>)>,
    pub log: Vec<EpochLog>,
    pub steps: usize,
}

/// Mean cross-entropy over `stacks` and its gradient, one tensor per parameter
/// in registry order. `draw`, when present, jitters the value stream of each
/// utterance. Gradients are accumulated over fixed-size sub-graphs in order,
/// so results do not depend on memory limits.
pub fn batch_gradients(
    params: &MhfaParams<f32>,
    cfg: &MhfaConfig,
    stacks: &[FeatureStack],
    labels: &[usize],
    draw: Option<&DsuDraw>,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let n = stacks.len();
    if n == 0 || labels.len() != n || draw.is_some_and(|d| d.batch() != n) {
        return Err(Error::Contract(format!(
            "batch of {n} stacks with {} labels",
            labels.len()
        )));
    }
    let mut grads: Vec<Tensor<f32>> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut loss_sum = 0.0;
    for (c, chunk) in stacks.chunks(GRAPH_CHUNK).enumerate() {
        let start = c * GRAPH_CHUNK;
        let mut g = Graph::<f32>::new();
        let pv = bind_params(&mut g, params, true);
        let mut pooled = Vec::with_capacity(chunk.len());
        for (k, stack) in chunk.iter().enumerate() {
            let x = g.constant(stack.to_tensor());
            let shift = draw.map(|d| (d.shift_mu[start + k].as_slice(), d.shift_sigma[start + k].as_slice()));
            pooled.push(pool_utterance(&mut g, cfg, &pv, x, shift)?.0);
        }
        let rows = stack_rows(&mut g, &pooled)?;
        let (_, logits) = classify(&mut g, &pv, rows)?;
        let loss = nll_loss(&mut g, logits, &labels[start..start + chunk.len()])?;
        let share = chunk.len() as f32 / n as f32;
        let scaled = g.scale(loss, share)?;
        loss_sum += g.value(loss).data()[0] as f64 * chunk.len() as f64;
        let mut chunk_grads = g.backward(scaled)?;
        for (acc, &v) in grads.iter_mut().zip(&pv.vars) {
            let gv = chunk_grads.take(v).expect("parameters are trainable");
            for (a, b) in acc.data_mut().iter_mut().zip(gv.data()) {
                *a += *b;
            }
        }
    }
    Ok((loss_sum / n as f64, grads))
}

fn dev_eer(params: &MhfaParams<f32>, mcfg: &MhfaConfig, tcfg: &TrainConfig, data: &TrainData) -> Result<Option<f64>> {
    let has = |l: Label| data.dev.iter().any(|e| e.label == l);
    if !has(Label::Bonafide) || !has(Label::Spoof) {
        return Ok(None);
    }
    let records = score_dataset(params, mcfg, data.dev, data.source, tcfg.eval_frames)?;
    let (mut bona, mut spoof) = (Vec::new(), Vec::new());
    for r in &records {
        match r.label {
            Label::Bonafide => bona.push(r.score),
            Label::Spoof => spoof.push(r.score),
        }
    }
    Ok(Some(eer_from_scores(&bona, &spoof)?.eer))
}

/// Trains from a seeded initialization. With a `workdir`, writes
/// `train_log.jsonl`, `best.ckpt` and `final.ckpt` there.
pub fn fit(mcfg: &MhfaConfig, tcfg: &TrainConfig, data: TrainData, workdir: Option<&Path>) -> Result<FitOutput> {
    mcfg.validate()?;
    tcfg.validate()?;
    let n = data.train.len();
    let classes = |l: Label| data.train.iter().filter(|e| e.label == l).count();
    if classes(Label::Bonafide) == 0 || classes(Label::Spoof) == 0 {
        return Err(Error::Config(format!(
            "training data needs both classes, got {} bonafide and {} spoof",
            classes(Label::Bonafide),
            classes(Label::Spoof)
        )));
    }

    let mut params = MhfaParams::<f32>::init(mcfg, &mut rng_for(tcfg.seed, "init"));
    let groups = build_param_groups(&params, tcfg);
    let names = params.names();
    let mut state = OptimizerState::new(&params.tensors());
    let mut shuffle_rng = rng_for(tcfg.seed, "shuffle");
    let mut crop_rng = rng_for(tcfg.seed, "crop");
    let mut dsu_rng = rng_for(tcfg.seed, "dsu");

    let per_epoch = n.div_ceil(tcfg.batch_size);
    let total_steps = tcfg.max_epochs * per_epoch;
    let warmup_steps = tcfg.warmup_epochs * per_epoch;

    let mut log_file = match workdir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("train_log.jsonl"))?))
        }
        None => None,
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut best: Option<(usize, f64, MhfaParams<f32>)> = None;
    let mut log = Vec::with_capacity(tcfg.max_epochs);
    for epoch in 1..=tcfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_total = 0.0;
        let mut rates = groups.rates(lr_at_step(step, total_steps, warmup_steps, tcfg));
        for batch in order.chunks(tcfg.batch_size) {
            let mut stacks = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let entry = &data.train[i];
                let stack = data.source.load(entry)?;
                stacks.push(random_crop(&stack, tcfg.crop_frames, &mut crop_rng));
                labels.push(entry.label.index());
            }
            let draw = if mcfg.dsu_enabled {
                let values = stacks
                    .iter()
                    .map(|s| value_stream(s, &params, mcfg))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&Tensor<f32>> = values.iter().collect();
                plan_batch(&refs, &mcfg.dsu, &mut dsu_rng, Mode::Train)?
            } else {
                None
            };
            let (loss, grads) = batch_gradients(&params, mcfg, &stacks, &labels, draw.as_ref())?;
            loss_total += loss * batch.len() as f64;

            rates = groups.rates(lr_at_step(step, total_steps, warmup_steps, tcfg));
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            adamw_step(&mut params.tensors_mut(), &grad_refs, &names, &rates, &mut state, tcfg)?;
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }

        let eer = dev_eer(&params, mcfg, tcfg, &data)?;
        let entry = EpochLog {
            epoch,
            mean_loss: loss_total / n as f64,
            dev_eer: eer,
            lr_backend: groups.backend.first().map_or(0.0, |&i| rates[i]),
            lr_frontend: groups.frontend.first().map_or(0.0, |&i| rates[i]),
        };
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &entry)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        log.push(entry);
        if let Some(e) = eer {
            if best.as_ref().is_none_or(|(_, b, _)| e < *b) {
                best = Some((epoch, e, params.clone()));
                if let Some(dir) = workdir {
                    save_checkpoint(&dir.join("best.ckpt"), mcfg, &params)?;
                }
            }
        }
    }
    if let Some(dir) = workdir {
        save_checkpoint(&dir.join("final.ckpt"), mcfg, &params)?;
    }
    Ok(FitOutput {
        params,
        best: best.map(|(e, _, p)| (e, p)),
        log,
        steps: step,
    })
}
