use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    // rhs shape is a suffix of lhs shape; rhs repeats over the leading axes.
    RowAdd(Var, Var),
    RowSub(Var, Var),
    RowMul(Var, Var),
    RowDiv(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Sum(Var),
    MeanAxis(Var, usize),
    StdAxis(Var, usize, T),
    Nll(Var, Vec<usize>),
    ChannelAffine(Var, Var, Var),
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in construction order, so every
/// input of a node precedes it and the reverse sweep is a single pass.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &e)| e)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a = *a + *d;
            }
        }
        None => *slot = Some(delta),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    /// Every op output is checked for NaN/Inf when enabled.
    pub fn with_finite_checks(mut self) -> Self {
        self.check_finite = true;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Result<Var> {
        if self.check_finite {
            value.ensure_finite(&format!("output of node {}", self.nodes.len()))?;
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(op, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    fn zip_rows(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, row) = (self.value(a), self.value(b));
        let (xs, rs) = (x.shape(), row.shape());
        if rs.len() > xs.len() || xs[xs.len() - rs.len()..] != *rs {
            return Err(Error::shape(op, xs, rs));
        }
        let n = row.numel();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &p)| f(p, row.data()[i % n]))
            .collect();
        Tensor::new(xs.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |p, q| p + q)?;
        self.push(Op::Add(a, b), out, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |p, q| p - q)?;
        self.push(Op::Sub(a, b), out, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |p, q| p * q)?;
        self.push(Op::Mul(a, b), out, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("div", a, b, |p, q| p / q)?;
        self.push(Op::Div(a, b), out, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        self.push(Op::Scale(a, c), out, &[a])
    }

    /// `a + row`, with `row` repeated over the leading axes of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.zip_rows("add_row", a, row, |p, q| p + q)?;
        self.push(Op::RowAdd(a, row), out, &[a, row])
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.zip_rows("sub_row", a, row, |p, q| p - q)?;
        self.push(Op::RowSub(a, row), out, &[a, row])
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.zip_rows("mul_row", a, row, |p, q| p * q)?;
        self.push(Op::RowMul(a, row), out, &[a, row])
    }

    pub fn div_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.zip_rows("div_row", a, row, |p, q| p / q)?;
        self.push(Op::RowDiv(a, row), out, &[a, row])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        self.push(Op::Transpose(a), out, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(Op::Reshape(a), out, &[a])
    }

    /// Concatenation along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let lead = {
            let s = self.shape(*first);
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != *lead {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        self.push(Op::Concat(parts.to_vec()), out, parts)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = x.axis_split(axis)?;
        let mut out = x.clone();
        let data = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| data[idx(k)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for k in 0..len {
                    let e = (data[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    sum = sum + e;
                }
                for k in 0..len {
                    data[idx(k)] = data[idx(k)] / sum;
                }
            }
        }
        self.push(Op::Softmax(a, axis), out, &[a])
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = x.axis_split(axis)?;
        let mut out = x.clone();
        let data = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| data[idx(k)]).fold(T::neg_infinity(), T::max);
                let lse = max + (0..len).map(|k| (data[idx(k)] - max).exp()).sum::<T>().ln();
                for k in 0..len {
                    data[idx(k)] = data[idx(k)] - lse;
                }
            }
        }
        self.push(Op::LogSoftmax(a, axis), out, &[a])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = x.axis_split(axis)?;
        let n = T::from_f64(len as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    data[o * inner + i] = data[o * inner + i] + x.data()[(o * len + k) * inner + i];
                }
            }
        }
        data.iter_mut().for_each(|v| *v = *v / n);
        let out = Tensor::new(reduced_shape(x.shape(), axis), data)?;
        self.push(Op::MeanAxis(a, axis), out, &[a])
    }

    /// `sqrt(population variance + eps)` over `axis`; the axis is removed.
    pub fn std_axis(&mut self, a: Var, axis: usize, eps: T) -> Result<Var> {
        let x = self.value(a);
        let (outer, len, inner) = x.axis_split(axis)?;
        let n = T::from_f64(len as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| x.data()[(o * len + k) * inner + i];
                let mean = (0..len).map(at).sum::<T>() / n;
                let var = (0..len).map(|k| (at(k) - mean).powi(2)).sum::<T>() / n;
                data[o * inner + i] = (var + eps).sqrt();
            }
        }
        let out = Tensor::new(reduced_shape(x.shape(), axis), data)?;
        self.push(Op::StdAxis(a, axis, eps), out, &[a])
    }

    /// Mean negative log-likelihood of `targets` under row-wise log-probabilities.
    pub fn nll(&mut self, log_probs: Var, targets: &[usize]) -> Result<Var> {
        let x = self.value(log_probs);
        let &[b, c] = x.shape() else {
            return Err(Error::Contract(format!(
                "nll expects [batch, classes], got {:?}",
                x.shape()
            )));
        };
        if targets.len() != b {
            return Err(Error::shape("nll", x.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Contract(format!("target {bad} out of {c} classes")));
        }
        let total: T = targets.iter().enumerate().map(|(r, &t)| x.data()[r * c + t]).sum();
        let out = Tensor::scalar(-total / T::from_f64(b as f64));
        self.push(Op::Nll(log_probs, targets.to_vec()), out, &[log_probs])
    }

    /// `x[l, t, :] * scale[l, :] + shift[l, :]` for a rank-3 `x`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let xv = self.value(x);
        let &[l, t, d] = xv.shape() else {
            return Err(Error::Contract(format!(
                "channel_affine expects a rank-3 input, got {:?}",
                xv.shape()
            )));
        };
        for s in [scale, shift] {
            if self.shape(s) != [l, d] {
                return Err(Error::shape("channel_affine", xv.shape(), self.shape(s)));
            }
        }
        let (g, b) = (self.value(scale).data(), self.value(shift).data());
        let mut data = xv.data().to_vec();
        for li in 0..l {
            for ti in 0..t {
                let row = &mut data[(li * t + ti) * d..(li * t + ti + 1) * d];
                for (k, v) in row.iter_mut().enumerate() {
                    *v = *v * g[li * d + k] + b[li * d + k];
                }
            }
        }
        let out = Tensor::new(vec![l, t, d], data)?;
        self.push(Op::ChannelAffine(x, scale, shift), out, &[x, scale, shift])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[id] = None;
            } else if grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let send = |v: Var, t: Tensor<T>, grads: &mut [Option<Tensor<T>>]| {
            if self.wants(v) {
                add_into(&mut grads[v.0], t);
            }
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                send(*a, elementwise(g, y, |p, q| p * q), grads);
                send(*b, elementwise(g, x, |p, q| p * q), grads);
            }
            Op::Div(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                send(*a, elementwise(g, y, |p, q| p / q), grads);
                let gb = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y.data()))
                    .map(|(&gi, (&xi, &yi))| -gi * xi / (yi * yi))
                    .collect();
                send(*b, Tensor::new(y.shape().to_vec(), gb)?, grads);
            }
            Op::Scale(a, c) => send(*a, g.map(|v| v * *c), grads),
            Op::RowAdd(a, r) | Op::RowSub(a, r) | Op::RowMul(a, r) | Op::RowDiv(a, r) => {
                let (x, row) = (self.value(*a), self.value(*r));
                let n = row.numel();
                let rd = row.data();
                let (gx, grow_terms): (Vec<T>, Vec<T>) = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .enumerate()
                    .map(|(i, (&gi, &xi))| {
                        let ri = rd[i % n];
                        match op {
                            Op::RowAdd(..) => (gi, gi),
                            Op::RowSub(..) => (gi, -gi),
                            Op::RowMul(..) => (gi * ri, gi * xi),
                            _ => (gi / ri, -gi * xi / (ri * ri)),
                        }
                    })
                    .unzip();
                let mut grow = vec![T::zero(); n];
                for (i, v) in grow_terms.into_iter().enumerate() {
                    grow[i % n] = grow[i % n] + v;
                }
                send(*a, Tensor::new(x.shape().to_vec(), gx)?, grads);
                send(*r, Tensor::new(row.shape().to_vec(), grow)?, grads);
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    send(*a, g.matmul_nt(y)?, grads);
                }
                if self.wants(*b) {
                    send(*b, x.matmul_tn(g)?, grads);
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()?, grads),
            Op::Reshape(a) => send(*a, g.reshape(self.shape(*a))?, grads),
            Op::Concat(parts) => {
                let last = out.shape()[out.rank() - 1];
                let rows = out.numel() / last;
                let mut offset = 0;
                for &p in parts {
                    let shape = self.shape(p);
                    let w = shape[shape.len() - 1];
                    let mut data = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * last + offset..r * last + offset + w]);
                    }
                    offset += w;
                    send(p, Tensor::new(shape.to_vec(), data)?, grads);
                }
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = out.axis_split(*axis)?;
                let (s, gd) = (out.data(), g.data());
                let mut dx = vec![T::zero(); out.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| gd[idx(k)] * s[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = s[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                send(*a, Tensor::new(out.shape().to_vec(), dx)?, grads);
            }
            Op::LogSoftmax(a, axis) => {
                let (outer, len, inner) = out.axis_split(*axis)?;
                let (lp, gd) = (out.data(), g.data());
                let mut dx = vec![T::zero(); out.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let gsum: T = (0..len).map(|k| gd[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = gd[idx(k)] - lp[idx(k)].exp() * gsum;
                        }
                    }
                }
                send(*a, Tensor::new(out.shape().to_vec(), dx)?, grads);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                send(*a, Tensor::full(self.shape(*a), gv), grads);
            }
            Op::MeanAxis(a, axis) => {
                let x = self.value(*a);
                let (outer, len, inner) = x.axis_split(*axis)?;
                let n = T::from_f64(len as f64);
                let mut dx = vec![T::zero(); x.numel()];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            dx[(o * len + k) * inner + i] = g.data()[o * inner + i] / n;
                        }
                    }
                }
                send(*a, Tensor::new(x.shape().to_vec(), dx)?, grads);
            }
            Op::StdAxis(a, axis, _) => {
                let x = self.value(*a);
                let (outer, len, inner) = x.axis_split(*axis)?;
                let n = T::from_f64(len as f64);
                let mut dx = vec![T::zero(); x.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let mean = (0..len).map(|k| x.data()[at(k)]).sum::<T>() / n;
                        let coef = g.data()[o * inner + i] / (n * out.data()[o * inner + i]);
                        for k in 0..len {
                            dx[at(k)] = coef * (x.data()[at(k)] - mean);
                        }
                    }
                }
                send(*a, Tensor::new(x.shape().to_vec(), dx)?, grads);
            }
            Op::Nll(a, targets) => {
                let x = self.value(*a);
                let c = x.shape()[1];
                let w = -g.data()[0] / T::from_f64(targets.len() as f64);
                let mut dx = vec![T::zero(); x.numel()];
                for (r, &t) in targets.iter().enumerate() {
                    dx[r * c + t] = w;
                }
                send(*a, Tensor::new(x.shape().to_vec(), dx)?, grads);
            }
            Op::ChannelAffine(x, scale, shift) => {
                let xv = self.value(*x);
                let &[l, t, d] = xv.shape() else {
                    unreachable!("checked at construction")
                };
                let gs = self.value(*scale).data();
                let gd = g.data();
                let mut dx = vec![T::zero(); xv.numel()];
                let mut dscale = vec![T::zero(); l * d];
                let mut dshift = vec![T::zero(); l * d];
                for li in 0..l {
                    for ti in 0..t {
                        let base = (li * t + ti) * d;
                        for k in 0..d {
                            let gi = gd[base + k];
                            dx[base + k] = gi * gs[li * d + k];
                            dscale[li * d + k] = dscale[li * d + k] + gi * xv.data()[base + k];
                            dshift[li * d + k] = dshift[li * d + k] + gi;
                        }
                    }
                }
                if self.wants(*x) {
                    send(*x, Tensor::new(vec![l, t, d], dx)?, grads);
                }
                send(*scale, Tensor::new(vec![l, d], dscale)?, grads);
                send(*shift, Tensor::new(vec![l, d], dshift)?, grads);
            }
        }
        Ok(())
    }
}

fn elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked at construction")
}

/// Gradients of a scalar loss with respect to every trainable leaf.
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for constants and interior nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
