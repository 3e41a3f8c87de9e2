use rand_distr::{Distribution, StandardNormal};

use super::MhfaConfig;
use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::tensor::{Scalar, Tensor};

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backend,
    /// Front-end adapter; trained at a scaled learning rate.
    Frontend,
}

/// Every trainable tensor of the back-end, in registry order.
///
/// The key projection has no bias: a constant offset on the keys shifts each
/// head's attention logits uniformly over time and cancels in the softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct MhfaParams<T: Scalar = f32> {
    /// `[L]` key-stream layer logits.
    pub layer_weights_key: Tensor<T>,
    /// `[L]` value-stream layer logits.
    pub layer_weights_value: Tensor<T>,
    /// `[D, D_cmp]`
    pub key_proj: Tensor<T>,
    /// `[D, D_cmp]`
    pub value_proj: Tensor<T>,
    /// `[D_cmp]`
    pub value_bias: Tensor<T>,
    /// `[D_cmp, H]`, one query column per head.
    pub attention: Tensor<T>,
    /// `[H·D_cmp, E]`
    pub embedding: Tensor<T>,
    /// `[E]`
    pub embedding_bias: Tensor<T>,
    /// `[E, 2]`
    pub classifier: Tensor<T>,
    /// `[2]`
    pub classifier_bias: Tensor<T>,
    /// `[L, D]` per-layer scale and shift, present when the adapter is enabled.
    pub adapter: Option<(Tensor<T>, Tensor<T>)>,
}

pub(crate) const NAMES: [&str; 12] = [
    "layer_weights.key",
    "layer_weights.value",
    "key_proj.weight",
    "value_proj.weight",
    "value_proj.bias",
    "attention.weight",
    "embedding.weight",
    "embedding.bias",
    "classifier.weight",
    "classifier.bias",
    "adapter.scale",
    "adapter.shift",
];

fn gaussian<T: Scalar>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(std * z)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

impl<T: Scalar> MhfaParams<T> {
    /// Uniform layer weights, `N(0, 1/fan_in)` matrices, zero biases and an
    /// identity adapter.
    pub fn init(cfg: &MhfaConfig, rng: &mut Rng) -> Self {
        let (l, d, c, h, e) = (cfg.layers, cfg.dim, cfg.compression_dim, cfg.heads, cfg.embed_dim);
        Self {
            layer_weights_key: Tensor::zeros(&[l]),
            layer_weights_value: Tensor::zeros(&[l]),
            key_proj: gaussian(rng, &[d, c], d),
            value_proj: gaussian(rng, &[d, c], d),
            value_bias: Tensor::zeros(&[c]),
            attention: gaussian(rng, &[c, h], c),
            embedding: gaussian(rng, &[h * c, e], h * c),
            embedding_bias: Tensor::zeros(&[e]),
            classifier: gaussian(rng, &[e, 2], e),
            classifier_bias: Tensor::zeros(&[2]),
            adapter: cfg
                .adapter_enabled
                .then(|| (Tensor::ones(&[l, d]), Tensor::zeros(&[l, d]))),
        }
    }

    /// Expected `(name, shape)` registry for a configuration.
    pub fn expected_shapes(cfg: &MhfaConfig) -> Vec<(&'static str, Vec<usize>)> {
        let (l, d, c, h, e) = (cfg.layers, cfg.dim, cfg.compression_dim, cfg.heads, cfg.embed_dim);
        let mut shapes = vec![
            vec![l],
            vec![l],
            vec![d, c],
            vec![d, c],
            vec![c],
            vec![c, h],
            vec![h * c, e],
            vec![e],
            vec![e, 2],
            vec![2],
        ];
        if cfg.adapter_enabled {
            shapes.push(vec![l, d]);
            shapes.push(vec![l, d]);
        }
        NAMES.iter().copied().zip(shapes).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![
            &self.layer_weights_key,
            &self.layer_weights_value,
            &self.key_proj,
            &self.value_proj,
            &self.value_bias,
            &self.attention,
            &self.embedding,
            &self.embedding_bias,
            &self.classifier,
            &self.classifier_bias,
        ];
        if let Some((s, b)) = &self.adapter {
            out.push(s);
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.layer_weights_key,
            &mut self.layer_weights_value,
            &mut self.key_proj,
            &mut self.value_proj,
            &mut self.value_bias,
            &mut self.attention,
            &mut self.embedding,
            &mut self.embedding_bias,
            &mut self.classifier,
            &mut self.classifier_bias,
        ];
        if let Some((s, b)) = &mut self.adapter {
            out.push(s);
            out.push(b);
        }
        out
    }

    pub fn names(&self) -> Vec<&'static str> {
        NAMES[..self.tensors().len()].to_vec()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.names()
            .into_iter()
            .map(|n| {
                if n.starts_with("adapter.") {
                    ParamGroup::Frontend
                } else {
                    ParamGroup::Backend
                }
            })
            .collect()
    }

    /// Rebuilds parameters from tensors in registry order.
    pub fn from_tensors(cfg: &MhfaConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let expected = Self::expected_shapes(cfg);
        if tensors.len() != expected.len() {
            return Err(Error::dim(
                "parameters",
                format!("expected {} tensors, got {}", expected.len(), tensors.len()),
            ));
        }
        for ((name, shape), t) in expected.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::dim(*name, format!("expected {shape:?}, got {:?}", t.shape())));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked above");
        let mut p = Self {
            layer_weights_key: next(),
            layer_weights_value: next(),
            key_proj: next(),
            value_proj: next(),
            value_bias: next(),
            attention: next(),
            embedding: next(),
            embedding_bias: next(),
            classifier: next(),
            classifier_bias: next(),
            adapter: None,
        };
        if cfg.adapter_enabled {
            p.adapter = Some((next(), next()));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    pub fn cast<U: Scalar>(&self) -> MhfaParams<U> {
        MhfaParams {
            layer_weights_key: self.layer_weights_key.cast(),
            layer_weights_value: self.layer_weights_value.cast(),
            key_proj: self.key_proj.cast(),
            value_proj: self.value_proj.cast(),
            value_bias: self.value_bias.cast(),
            attention: self.attention.cast(),
            embedding: self.embedding.cast(),
            embedding_bias: self.embedding_bias.cast(),
            classifier: self.classifier.cast(),
            classifier_bias: self.classifier_bias.cast(),
            adapter: self.adapter.as_ref().map(|(s, b)| (s.cast(), b.cast())),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}
