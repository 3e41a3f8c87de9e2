use super::{MhfaConfig, MhfaParams, Mode};
use crate::autodiff::{Graph, Var};
use crate::dsu;
use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::seed::Rng;
use crate::tensor::{Scalar, Tensor};

/// Parameters bound onto a graph, in registry order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub vars: Vec<Var>,
    adapter: bool,
}

impl ParamVars {
    /// Wraps variables already bound in registry order.
    pub fn from_vars(vars: Vec<Var>, adapter: bool) -> Self {
        Self { vars, adapter }
    }

    fn get(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Places every parameter on `g`, as trainable leaves or as constants.
pub fn bind_params<T: Scalar>(g: &mut Graph<T>, params: &MhfaParams<T>, trainable: bool) -> ParamVars {
    let vars = params
        .tensors()
        .into_iter()
        .map(|t| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect();
    ParamVars {
        vars,
        adapter: params.adapter.is_some(),
    }
}

/// Softmax-weighted sum of the layers of `x` (`L × T × D`), giving `T × D`.
pub fn aggregate_layers<T: Scalar>(g: &mut Graph<T>, x: Var, weights: Var) -> Result<Var> {
    let &[l, t, d] = g.shape(x) else {
        return Err(Error::dim(
            "layer aggregation",
            format!("expected [L, T, D], got {:?}", g.shape(x)),
        ));
    };
    if g.shape(weights) != [l] {
        return Err(Error::dim(
            "layer aggregation",
            format!("{} layer weights for {l} layers", g.value(weights).numel()),
        ));
    }
    let probs = g.softmax(weights, 0)?;
    let row = g.reshape(probs, &[1, l])?;
    let flat = g.reshape(x, &[l, t * d])?;
    let mixed = g.matmul(row, flat)?;
    g.reshape(mixed, &[t, d])
}

/// Graph handles for one utterance's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[1, 2]`: spoof, bonafide.
    pub logits: Var,
    /// `[1, E]`
    pub embedding: Var,
    /// `[T, H]`, each column sums to one over time.
    pub attention: Var,
}

fn adapted_input<T: Scalar>(g: &mut Graph<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    if pv.adapter {
        g.channel_affine(x, pv.get(10), pv.get(11))
    } else {
        Ok(x)
    }
}

fn check_input(cfg: &MhfaConfig, shape: &[usize]) -> Result<()> {
    match *shape {
        [l, _, d] if l == cfg.layers && d == cfg.dim => Ok(()),
        _ => Err(Error::dim(
            "input features",
            format!("expected [{}, T, {}], got {shape:?}", cfg.layers, cfg.dim),
        )),
    }
}

/// Multi-head pooling of one utterance `x` (`L × T × D`): returns the
/// concatenated head outputs (`[1, H·D_cmp]`) and the attention map (`[T, H]`).
///
/// `dsu_shift` carries this instance's sampled `(ε_μ·Σ_μ, ε_σ·Σ_σ)` rows and
/// is applied to the value stream before its projection; pass `None` in eval
/// mode.
pub fn pool_utterance<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &MhfaConfig,
    pv: &ParamVars,
    x: Var,
    dsu_shift: Option<(&[f64], &[f64])>,
) -> Result<(Var, Var)> {
    check_input(cfg, g.shape(x))?;
    let x = adapted_input(g, pv, x)?;
    let key_feat = aggregate_layers(g, x, pv.get(0))?;
    let mut value_feat = aggregate_layers(g, x, pv.get(1))?;
    if let Some((shift_mu, shift_sigma)) = dsu_shift {
        value_feat = dsu::perturb_in_graph(g, value_feat, shift_mu, shift_sigma, cfg.dsu.eps)?;
    }

    let keys = g.matmul(key_feat, pv.get(2))?;
    let values = g.matmul(value_feat, pv.get(3))?;
    let values = g.add_row(values, pv.get(4))?;

    let scores = g.matmul(keys, pv.get(5))?;
    let attention = g.softmax(scores, 0)?;
    let by_head = g.transpose(attention)?;
    let pooled = g.matmul(by_head, values)?;
    let concat = g.reshape(pooled, &[1, cfg.heads * cfg.compression_dim])?;
    Ok((concat, attention))
}

/// Embedding (`[B, E]`) and logits (`[B, 2]`) for pooled rows (`[B, H·D_cmp]`).
pub fn classify<T: Scalar>(g: &mut Graph<T>, pv: &ParamVars, pooled: Var) -> Result<(Var, Var)> {
    let embedding = g.matmul(pooled, pv.get(6))?;
    let embedding = g.add_row(embedding, pv.get(7))?;
    let logits = g.matmul(embedding, pv.get(8))?;
    let logits = g.add_row(logits, pv.get(9))?;
    Ok((embedding, logits))
}

/// Stacks `[1, W]` rows into `[B, W]`.
pub fn stack_rows<T: Scalar>(g: &mut Graph<T>, rows: &[Var]) -> Result<Var> {
    if rows.len() == 1 {
        return Ok(rows[0]);
    }
    let width = g.shape(rows[0])[1];
    let joined = g.concat(rows)?;
    g.reshape(joined, &[rows.len(), width])
}

/// Forward pass for one utterance `x` (`L × T × D`); see [`pool_utterance`].
pub fn forward_utterance<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &MhfaConfig,
    pv: &ParamVars,
    x: Var,
    dsu_shift: Option<(&[f64], &[f64])>,
) -> Result<Outputs> {
    let (pooled, attention) = pool_utterance(g, cfg, pv, x, dsu_shift)?;
    let (embedding, logits) = classify(g, pv, pooled)?;
    Ok(Outputs {
        logits,
        embedding,
        attention,
    })
}

/// Mean cross-entropy of `[B, 2]` logits against class indices
/// (spoof 0, bonafide 1).
pub fn nll_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let log_probs = g.log_softmax(logits, 1)?;
    g.nll(log_probs, labels)
}

/// The value-stream features `V_feat` (`T × D`) without building gradients.
pub fn value_stream<T: Scalar>(stack: &FeatureStack, params: &MhfaParams<T>, cfg: &MhfaConfig) -> Result<Tensor<T>> {
    check_input(cfg, &[stack.layers(), stack.frames(), stack.dim()])?;
    let mut g = Graph::new();
    let x = g.constant(stack.to_tensor());
    let x = match &params.adapter {
        Some((s, b)) => {
            let (s, b) = (g.constant(s.clone()), g.constant(b.clone()));
            g.channel_affine(x, s, b)?
        }
        None => x,
    };
    let w = g.constant(params.layer_weights_value.clone());
    let v = aggregate_layers(&mut g, x, w)?;
    Ok(g.value(v).clone())
}

/// Single-utterance forward returning `(logits [2], embedding [E])`.
///
/// In train mode with DSU enabled the per-batch gate is drawn from `rng`, but a
/// batch of one has zero statistic spread, so the value stream is unchanged.
pub fn mhfa_forward<T: Scalar>(
    stack: &FeatureStack,
    params: &MhfaParams<T>,
    cfg: &MhfaConfig,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let draw = if cfg.dsu_enabled && mode == Mode::Train {
        let v = value_stream(stack, params, cfg)?;
        dsu::plan_batch(&[&v], &cfg.dsu, rng, mode)?
    } else {
        None
    };
    let mut g = Graph::new();
    let pv = bind_params(&mut g, params, false);
    let x = g.constant(stack.to_tensor());
    let shift = draw
        .as_ref()
        .map(|d| (d.shift_mu[0].as_slice(), d.shift_sigma[0].as_slice()));
    let out = forward_utterance(&mut g, cfg, &pv, x, shift)?;
    let logits = g.value(out.logits).reshape(&[2])?;
    let embedding = g.value(out.embedding).reshape(&[cfg.embed_dim])?;
    Ok((logits, embedding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::seed::rng_for;
    use rand_distr::{Distribution, StandardNormal};

    fn random_stack(l: usize, t: usize, d: usize, seed: u64) -> FeatureStack {
        let mut rng = rng_for(seed, "stack");
        let values = (0..l * t * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32
            })
            .collect();
        FeatureStack::new(l, t, d, values).unwrap()
    }

    fn small_cfg() -> MhfaConfig {
        MhfaConfig {
            layers: 3,
            dim: 8,
            heads: 4,
            compression_dim: 6,
            embed_dim: 5,
            ..MhfaConfig::default()
        }
    }

    /// Randomizes every parameter so no gradient path starts at a symmetric point.
    fn random_params(cfg: &MhfaConfig, seed: u64) -> MhfaParams<f64> {
        let mut rng = rng_for(seed, "init");
        let mut p = MhfaParams::<f64>::init(cfg, &mut rng);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.3 * z;
            }
        }
        p
    }

    #[test]
    fn single_layer_aggregation_is_identity() {
        let s = random_stack(1, 4, 3, 0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(s.to_tensor());
        let w = g.constant(Tensor::from_f64_slice(&[1], &[3.7]).unwrap());
        let y = aggregate_layers(&mut g, x, w).unwrap();
        let want = s.to_tensor::<f64>().reshape(&[4, 3]).unwrap();
        assert!(g.value(y).max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn uniform_weights_average_layers() {
        let s = random_stack(4, 3, 2, 1);
        let mut g = Graph::<f64>::new();
        let x = g.constant(s.to_tensor());
        let w = g.constant(Tensor::zeros(&[4]));
        let y = aggregate_layers(&mut g, x, w).unwrap();
        for t in 0..3 {
            for k in 0..2 {
                let mean = (0..4).map(|l| s.frame(l, t)[k] as f64).sum::<f64>() / 4.0;
                assert!((g.value(y).data()[t * 2 + k] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn peaked_weights_select_first_layer() {
        let s = random_stack(5, 6, 4, 2);
        let mut g = Graph::<f64>::new();
        let x = g.constant(s.to_tensor());
        let w = g.constant(Tensor::from_f64_slice(&[5], &[10.0, -10.0, -10.0, -10.0, -10.0]).unwrap());
        let y = aggregate_layers(&mut g, x, w).unwrap();
        let layer0 = Tensor::<f64>::new(vec![6, 4], s.layer(0).iter().map(|&v| v as f64).collect()).unwrap();
        let mut diff = g.value(y).clone();
        for (d, b) in diff.data_mut().iter_mut().zip(layer0.data()) {
            *d -= b;
        }
        assert!(diff.frobenius() / layer0.frobenius() < 1e-3);
    }

    #[test]
    fn aggregation_rejects_wrong_weight_count() {
        let s = random_stack(3, 2, 2, 0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(s.to_tensor());
        let w = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(aggregate_layers(&mut g, x, w), Err(Error::Dimension { .. })));
    }

    #[test]
    fn shape_contract_at_default_scale() {
        let cfg = MhfaConfig {
            layers: 4,
            dim: 32,
            ..MhfaConfig::default()
        };
        let params = MhfaParams::<f32>::init(&cfg, &mut rng_for(0, "init"));
        let s = random_stack(4, 16, 32, 3);
        let (logits, emb) = mhfa_forward(&s, &params, &cfg, Mode::Eval, &mut rng_for(0, "dsu")).unwrap();
        assert_eq!(logits.shape(), &[2]);
        assert_eq!(emb.shape(), &[256]);
    }

    #[test]
    fn rejects_mismatched_features() {
        let cfg = small_cfg();
        let params = MhfaParams::<f32>::init(&cfg, &mut rng_for(0, "init"));
        let s = random_stack(3, 4, 7, 0);
        let err = mhfa_forward(&s, &params, &cfg, Mode::Eval, &mut rng_for(0, "dsu")).unwrap_err();
        assert!(err.to_string().contains("input features"), "{err}");
    }

    #[test]
    fn attention_columns_sum_to_one() {
        let cfg = small_cfg();
        let params = random_params(&cfg, 4);
        let s = random_stack(3, 9, 8, 4);
        let mut g = Graph::<f64>::new();
        let pv = bind_params(&mut g, &params, false);
        let x = g.constant(s.to_tensor());
        let out = forward_utterance(&mut g, &cfg, &pv, x, None).unwrap();
        let a = g.value(out.attention);
        assert_eq!(a.shape(), &[9, 4]);
        for h in 0..4 {
            let col: f64 = (0..9).map(|t| a.data()[t * 4 + h]).sum();
            assert!((col - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // index form mirrors the hand derivation
    fn single_frame_pipeline_matches_hand_evaluation() {
        let cfg = small_cfg();
        let p = random_params(&cfg, 5);
        let s = random_stack(3, 1, 8, 5);
        let mut rng = rng_for(0, "dsu");
        let (logits, emb) = mhfa_forward(&s, &p, &cfg, Mode::Eval, &mut rng).unwrap();

        // direct evaluation with plain loops
        let (scale, shift) = p.adapter.as_ref().unwrap();
        let soft = |w: &Tensor<f64>| {
            let m = w.data().iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = w.data().iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect::<Vec<_>>()
        };
        let wv = soft(&p.layer_weights_value);
        let mut vfeat = [0.0; 8];
        for l in 0..3 {
            for k in 0..8 {
                let x = s.frame(l, 0)[k] as f64 * scale.data()[l * 8 + k] + shift.data()[l * 8 + k];
                vfeat[k] += wv[l] * x;
            }
        }
        let mut v = p.value_bias.data().to_vec();
        for k in 0..8 {
            for c in 0..6 {
                v[c] += vfeat[k] * p.value_proj.data()[k * 6 + c];
            }
        }
        // one frame: every head's attention weight is exactly one
        let concat: Vec<f64> = (0..4).flat_map(|_| v.clone()).collect();
        let mut e = p.embedding_bias.data().to_vec();
        for i in 0..24 {
            for j in 0..5 {
                e[j] += concat[i] * p.embedding.data()[i * 5 + j];
            }
        }
        let mut lg = p.classifier_bias.data().to_vec();
        for i in 0..5 {
            for j in 0..2 {
                lg[j] += e[i] * p.classifier.data()[i * 2 + j];
            }
        }
        for (a, b) in emb.data().iter().zip(&e) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in logits.data().iter().zip(&lg) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn nll_examples() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::from_f64_slice(&[1, 2], &[0.0, 0.0]).unwrap());
        for label in [0, 1] {
            let l = nll_loss(&mut g, z, &[label]).unwrap();
            assert!((g.value(l).item().unwrap() - 2f64.ln()).abs() < 1e-12);
        }
        let conf = g.constant(Tensor::from_f64_slice(&[1, 2], &[20.0, -20.0]).unwrap());
        let right = nll_loss(&mut g, conf, &[0]).unwrap();
        let wrong = nll_loss(&mut g, conf, &[1]).unwrap();
        assert!(g.value(right).item().unwrap() < 1e-15);
        // log(1 + e^-40) + 40
        let want = 40.0 + (-40f64).exp().ln_1p();
        assert!((g.value(wrong).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn nll_batch_averages() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::from_f64_slice(&[2, 2], &[0.0, 0.0, 20.0, -20.0]).unwrap());
        let l = nll_loss(&mut g, z, &[1, 1]).unwrap();
        let want = (2f64.ln() + 40.0 + (-40f64).exp().ln_1p()) / 2.0;
        assert!((g.value(l).item().unwrap() - want).abs() < 1e-12);
    }

    fn loss_fn(cfg: MhfaConfig, stacks: Vec<(FeatureStack, usize)>) -> impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> {
        move |g, vars| {
            let pv = ParamVars {
                vars: vars.to_vec(),
                adapter: cfg.adapter_enabled,
            };
            let mut logits = Vec::new();
            let mut labels = Vec::new();
            for (s, y) in &stacks {
                let x = g.constant(s.to_tensor());
                logits.push(forward_utterance(g, &cfg, &pv, x, None)?.logits);
                labels.push(*y);
            }
            let all = g.concat(&logits)?;
            let all = g.reshape(all, &[stacks.len(), 2])?;
            nll_loss(g, all, &labels)
        }
    }

    #[test]
    fn end_to_end_gradient_check() {
        let cfg = small_cfg();
        let p = random_params(&cfg, 6);
        let data = vec![(random_stack(3, 5, 8, 6), 1), (random_stack(3, 5, 8, 7), 0)];
        let tensors: Vec<Tensor<f64>> = p.tensors().into_iter().cloned().collect();
        let report = grad_check(loss_fn(cfg, data), &tensors, 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
        assert_eq!(report.checked, p.scalar_count());
    }

    #[test]
    fn gradient_check_through_dsu_instance_path() {
        let cfg = small_cfg();
        let p = random_params(&cfg, 8);
        let s = random_stack(3, 5, 8, 8);
        let shift_mu: Vec<f64> = (0..8).map(|k| 0.1 * k as f64 - 0.3).collect();
        let shift_sigma: Vec<f64> = (0..8).map(|k| 0.05 * k as f64 - 0.1).collect();
        let tensors: Vec<Tensor<f64>> = p.tensors().into_iter().cloned().collect();
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let pv = ParamVars {
                vars: vars.to_vec(),
                adapter: true,
            };
            let x = g.constant(s.to_tensor());
            let out = forward_utterance(g, &cfg, &pv, x, Some((&shift_mu, &shift_sigma)))?;
            nll_loss(g, out.logits, &[1])
        };
        let report = grad_check(f, &tensors, 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn layer_logit_shift_changes_nothing() {
        let cfg = small_cfg();
        let p = random_params(&cfg, 9);
        let mut q = p.clone();
        q.layer_weights_key.data_mut().iter_mut().for_each(|v| *v += 3.25);
        let s = random_stack(3, 7, 8, 9);
        let run = |p: &MhfaParams<f64>| mhfa_forward(&s, p, &cfg, Mode::Eval, &mut rng_for(0, "d")).unwrap().0;
        assert!(run(&p).max_abs_diff(&run(&q)) < 1e-12);
    }

    #[test]
    fn dsu_flag_is_inert_in_eval_mode() {
        let cfg = small_cfg();
        let p = MhfaParams::<f32>::init(&cfg, &mut rng_for(1, "init"));
        let s = random_stack(3, 7, 8, 10);
        let on = MhfaConfig {
            dsu_enabled: true,
            dsu: crate::dsu::DsuConfig { p: 1.0, eps: 1e-6 },
            ..cfg.clone()
        };
        let a = mhfa_forward(&s, &p, &cfg, Mode::Eval, &mut rng_for(0, "d")).unwrap();
        let b = mhfa_forward(&s, &p, &on, Mode::Eval, &mut rng_for(5, "d")).unwrap();
        assert_eq!(a, b);
    }
}
