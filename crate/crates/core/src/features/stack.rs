use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One utterance's layered features, `layers × frames × dim`, layer-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    layers: usize,
    frames: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureStack {
    pub fn new(layers: usize, frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if layers == 0 || frames == 0 || dim == 0 {
            return Err(Error::Contract(format!(
                "feature stack extents must be positive, got {layers}x{frames}x{dim}"
            )));
        }
        if values.len() != layers * frames * dim {
            return Err(Error::shape("feature stack", &[layers, frames, dim], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature stack".into()));
        }
        Ok(Self {
            layers,
            frames,
            dim,
            values,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        let n = self.frames * self.dim;
        &self.values[l * n..(l + 1) * n]
    }

    pub fn frame(&self, l: usize, t: usize) -> &[f32] {
        let start = (l * self.frames + t) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Applies one frame permutation to every layer.
    pub fn permute_frames(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.frames {
            return Err(Error::Contract("permutation length mismatch".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for l in 0..self.layers {
            for &t in order {
                values.extend_from_slice(self.frame(l, t));
            }
        }
        Self::new(self.layers, self.frames, self.dim, values)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            vec![self.layers, self.frames, self.dim],
            self.values.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("stack invariants imply a valid tensor")
    }
}
