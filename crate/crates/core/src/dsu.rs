//! Distribution-uncertainty (DSU) augmentation of feature statistics.
//!
//! Each instance's per-channel mean and standard deviation over time are
//! treated as Gaussian-uncertain: the batch spread of the means (`Σ_μ`) and of
//! the stds (`Σ_σ`) scales a standard-normal jitter, and the instance is
//! re-normalized onto the jittered statistics:
//!
//! ```text
//! μ̃ = μ + ε_μ·Σ_μ      σ̃ = σ + ε_σ·Σ_σ      x̃ = (x − μ)/σ · σ̃ + μ̃
//! ```
//!
//! `Σ_μ`, `Σ_σ` and the sampled `ε` are constants for differentiation;
//! gradients flow through `x`, `μ` and `σ`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::mhfa::Mode;
use crate::seed::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsuConfig {
    /// Probability that a batch is perturbed.
    pub p: f64,
    pub eps: f64,
}

impl Default for DsuConfig {
    fn default() -> Self {
        Self { p: 0.5, eps: 1e-6 }
    }
}

impl DsuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("dsu.p must lie in [0, 1], got {}", self.p)));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!("dsu.eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Instance and batch statistics for a `B × T × C` batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DsuStats {
    /// `B × C` means over time.
    pub mu: Vec<Vec<f64>>,
    /// `B × C` stds over time, `sqrt(var + eps)`.
    pub sigma: Vec<Vec<f64>>,
    pub sigma_mu: Vec<f64>,
    pub sigma_sigma: Vec<f64>,
}

/// Per-channel mean and `sqrt(population variance + eps)` over the rows of a
/// `T × C` slice.
fn channel_stats<T: Scalar>(x: &[T], frames: usize, channels: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![0.0; channels];
    for t in 0..frames {
        for c in 0..channels {
            mu[c] += x[t * channels + c].as_f64();
        }
    }
    mu.iter_mut().for_each(|m| *m /= frames as f64);
    let mut var = vec![0.0; channels];
    for t in 0..frames {
        for c in 0..channels {
            var[c] += (x[t * channels + c].as_f64() - mu[c]).powi(2);
        }
    }
    let sigma = var.iter().map(|v| (v / frames as f64 + eps).sqrt()).collect();
    (mu, sigma)
}

fn batch_spread(rows: &[Vec<f64>]) -> Vec<f64> {
    let b = rows.len() as f64;
    let c = rows[0].len();
    (0..c)
        .map(|k| {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / b;
            (rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / b).sqrt()
        })
        .collect()
}

fn batch_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, t, c] => Ok((b, t, c)),
        _ => Err(Error::dim("dsu", format!("expected [B, T, C], got {:?}", x.shape()))),
    }
}

/// Per-instance `(mu, sigma)` over the time axis of a `B × T × C` tensor.
pub fn instance_stats<T: Scalar>(x: &Tensor<T>, eps: f64) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let (b, t, c) = batch_dims(x)?;
    let mut mu = Vec::with_capacity(b * c);
    let mut sigma = Vec::with_capacity(b * c);
    for i in 0..b {
        let (m, s) = channel_stats(&x.data()[i * t * c..(i + 1) * t * c], t, c, eps);
        mu.extend(m);
        sigma.extend(s);
    }
    Ok((Tensor::new(vec![b, c], mu)?, Tensor::new(vec![b, c], sigma)?))
}

/// Statistics of a batch given as separate `T × C` instances.
pub fn batch_stats<T: Scalar>(instances: &[&Tensor<T>], eps: f64) -> Result<DsuStats> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Contract("dsu needs at least one instance".into()))?;
    let &[_, c] = first.shape() else {
        return Err(Error::dim("dsu", format!("expected [T, C], got {:?}", first.shape())));
    };
    let mut mu = Vec::with_capacity(instances.len());
    let mut sigma = Vec::with_capacity(instances.len());
    for x in instances {
        let &[t, ci] = x.shape() else {
            return Err(Error::dim("dsu", format!("expected [T, C], got {:?}", x.shape())));
        };
        if ci != c {
            return Err(Error::shape("dsu", first.shape(), x.shape()));
        }
        let (m, s) = channel_stats(x.data(), t, c, eps);
        mu.push(m);
        sigma.push(s);
    }
    Ok(DsuStats {
        sigma_mu: batch_spread(&mu),
        sigma_sigma: batch_spread(&sigma),
        mu,
        sigma,
    })
}

/// Sampled statistic offsets `ε_μ·Σ_μ` and `ε_σ·Σ_σ`, one row per instance.
#[derive(Clone, Debug, PartialEq)]
pub struct DsuDraw {
    pub shift_mu: Vec<Vec<f64>>,
    pub shift_sigma: Vec<Vec<f64>>,
}

impl DsuDraw {
    /// Draws all `ε_μ` (instance-major) and then all `ε_σ`.
    pub fn sample(stats: &DsuStats, rng: &mut Rng) -> Self {
        let b = stats.mu.len();
        let mut draw = |spread: &[f64]| -> Vec<Vec<f64>> {
            (0..b)
                .map(|_| {
                    spread
                        .iter()
                        .map(|&s| {
                            let e: f64 = StandardNormal.sample(rng);
                            e * s
                        })
                        .collect()
                })
                .collect()
        };
        let shift_mu = draw(&stats.sigma_mu);
        let shift_sigma = draw(&stats.sigma_sigma);
        Self { shift_mu, shift_sigma }
    }

    /// `ε = 0`: re-normalization onto the original statistics.
    pub fn zeros(batch: usize, channels: usize) -> Self {
        Self {
            shift_mu: vec![vec![0.0; channels]; batch],
            shift_sigma: vec![vec![0.0; channels]; batch],
        }
    }

    pub fn batch(&self) -> usize {
        self.shift_mu.len()
    }
}

/// Draws the per-batch gate and, if it opens, the jitter for `instances`.
/// Returns `None` when the batch passes through unchanged.
pub fn plan_batch<T: Scalar>(
    instances: &[&Tensor<T>],
    cfg: &DsuConfig,
    rng: &mut Rng,
    mode: Mode,
) -> Result<Option<DsuDraw>> {
    if mode == Mode::Eval {
        return Ok(None);
    }
    let gate: f64 = rng.random();
    if gate >= cfg.p {
        return Ok(None);
    }
    let stats = batch_stats(instances, cfg.eps)?;
    Ok(Some(DsuDraw::sample(&stats, rng)))
}

/// Re-normalizes each instance of `x` (`B × T × C`) onto jittered statistics.
pub fn perturb_with<T: Scalar>(x: &Tensor<T>, draw: &DsuDraw, eps: f64) -> Result<Tensor<T>> {
    let (b, t, c) = batch_dims(x)?;
    if draw.batch() != b {
        return Err(Error::dim(
            "dsu",
            format!("draw for {} instances, batch has {b}", draw.batch()),
        ));
    }
    let mut out = x.clone();
    for i in 0..b {
        let slice = &mut out.data_mut()[i * t * c..(i + 1) * t * c];
        let (mu, sigma) = channel_stats(slice, t, c, eps);
        for row in slice.chunks_exact_mut(c) {
            for k in 0..c {
                let mu_t = mu[k] + draw.shift_mu[i][k];
                let sigma_t = sigma[k] + draw.shift_sigma[i][k];
                row[k] = T::from_f64((row[k].as_f64() - mu[k]) / sigma[k] * sigma_t + mu_t);
            }
        }
    }
    Ok(out)
}

/// Batched DSU on a `B × T × C` tensor: identity in eval mode or when the
/// per-batch gate (probability `p`) stays closed.
pub fn dsu_perturb<T: Scalar>(x: &Tensor<T>, cfg: &DsuConfig, rng: &mut Rng, mode: Mode) -> Result<Tensor<T>> {
    let (b, t, c) = batch_dims(x)?;
    if b == 0 {
        return Err(Error::Contract("dsu needs B >= 1".into()));
    }
    let instances: Vec<Tensor<T>> = (0..b)
        .map(|i| Tensor::new(vec![t, c], x.data()[i * t * c..(i + 1) * t * c].to_vec()))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor<T>> = instances.iter().collect();
    match plan_batch(&refs, cfg, rng, mode)? {
        Some(draw) => perturb_with(x, &draw, cfg.eps),
        None => Ok(x.clone()),
    }
}

/// Differentiable DSU for one `T × C` instance given its row of a [`DsuDraw`].
pub fn perturb_in_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    shift_mu: &[f64],
    shift_sigma: &[f64],
    eps: f64,
) -> Result<Var> {
    let c = *g.shape(x).last().expect("non-empty shape");
    if shift_mu.len() != c || shift_sigma.len() != c {
        return Err(Error::dim(
            "dsu",
            format!("draw width {} vs channels {c}", shift_mu.len()),
        ));
    }
    let to_const =
        |g: &mut Graph<T>, v: &[f64]| g.constant(Tensor::from_f64_slice(&[c], v).expect("width checked above"));
    let mu = g.mean_axis(x, 0)?;
    let sigma = g.std_axis(x, 0, T::from_f64(eps))?;
    let centered = g.sub_row(x, mu)?;
    let normed = g.div_row(centered, sigma)?;
    let dmu = to_const(g, shift_mu);
    let dsigma = to_const(g, shift_sigma);
    let mu_t = g.add(mu, dmu)?;
    let sigma_t = g.add(sigma, dsigma)?;
    let scaled = g.mul_row(normed, sigma_t)?;
    g.add_row(scaled, mu_t)
}
