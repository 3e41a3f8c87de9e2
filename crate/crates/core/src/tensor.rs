//! Dense row-major tensors over `f32` (training) or `f64` (gradient checks).

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Strided matrix operand: element `(i, j)` sits at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
#[doc(hidden)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

/// Floating-point element type a [`Tensor`] can hold.
pub trait Scalar: Float + Default + Debug + Sum + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c[m×n] += a[m×k] · b[k×n]` with strided operands and row-major `c`.
    #[doc(hidden)]
    fn gemm_raw(m: usize, k: usize, n: usize, a: MatRef<'_, Self>, b: MatRef<'_, Self>, c: &mut [Self]);

    /// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
    fn gemm_acc(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        debug_assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
        gemm(m, k, n, MatRef::rows(a, k), MatRef::rows(b, n), c);
    }
}

/// Dispatches to a plain loop for row-vector products, where packing the
/// right operand would dominate, and to the blocked kernel otherwise.
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: MatRef<'_, T>, b: MatRef<'_, T>, c: &mut [T]) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    if m == 1 && b.cs == 1 {
        for p in 0..k {
            let s = a.data[p * a.cs];
            let row = &b.data[p * b.rs..p * b.rs + n];
            for (cj, &bj) in c.iter_mut().zip(row) {
                *cj = *cj + s * bj;
            }
        }
        return;
    }
    if m == 1 && b.rs == 1 {
        for (j, cj) in c.iter_mut().enumerate() {
            let col = &b.data[j * b.cs..j * b.cs + k];
            let dot: T = if a.cs == 1 {
                a.data[..k].iter().zip(col).map(|(&x, &y)| x * y).sum()
            } else {
                col.iter().enumerate().map(|(p, &y)| a.data[p * a.cs] * y).sum()
            };
            *cj = *cj + dot;
        }
        return;
    }
    if k == 1 && b.cs == 1 {
        let row = &b.data[..n];
        for i in 0..m {
            let s = a.data[i * a.rs];
            for (cj, &bj) in c[i * n..(i + 1) * n].iter_mut().zip(row) {
                *cj = *cj + s * bj;
            }
        }
        return;
    }
    T::gemm_raw(m, k, n, a, b, c);
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm_raw(m: usize, k: usize, n: usize, a: MatRef<'_, f32>, b: MatRef<'_, f32>, c: &mut [f32]) {
        assert!(max_index(m, k, a) < a.data.len() && max_index(k, n, b) < b.data.len());
        // SAFETY: the asserts above bound every operand access; `c` is m×n row-major.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm_raw(m: usize, k: usize, n: usize, a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: &mut [f64]) {
        assert!(max_index(m, k, a) < a.data.len() && max_index(k, n, b) < b.data.len());
        // SAFETY: as for f32.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                1.0,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

fn max_index<T>(rows: usize, cols: usize, m: MatRef<'_, T>) -> usize {
    (rows - 1) * m.rs + (cols - 1) * m.cs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel]).expect("positive extents")
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Assertion hook for NaN/Inf detection.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Splits the shape around `axis` into (outer, axis length, inner) extents.
    pub(crate) fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::Contract(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        match (self.shape.as_slice(), rhs.shape.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = vec![T::zero(); m * n];
                T::gemm_acc(m, k, n, &self.data, &rhs.data, &mut out);
                Tensor::new(vec![m, n], out)
            }
            _ => Err(Error::shape("matmul", &self.shape, &rhs.shape)),
        }
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        match (self.shape.as_slice(), rhs.shape.as_slice()) {
            (&[k, m], &[k2, n]) if k == k2 => {
                let mut out = vec![T::zero(); m * n];
                gemm(
                    m,
                    k,
                    n,
                    MatRef::transposed(&self.data, m),
                    MatRef::rows(&rhs.data, n),
                    &mut out,
                );
                Tensor::new(vec![m, n], out)
            }
            _ => Err(Error::shape("matmul_tn", &self.shape, &rhs.shape)),
        }
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        match (self.shape.as_slice(), rhs.shape.as_slice()) {
            (&[m, k], &[n, k2]) if k == k2 => {
                let mut out = vec![T::zero(); m * n];
                gemm(
                    m,
                    k,
                    n,
                    MatRef::rows(&self.data, k),
                    MatRef::transposed(&rhs.data, k),
                    &mut out,
                );
                Tensor::new(vec![m, n], out)
            }
            _ => Err(Error::shape("matmul_nt", &self.shape, &rhs.shape)),
        }
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let &[m, n] = self.shape.as_slice() else {
            return Err(Error::Contract(format!(
                "transpose needs a matrix, got {:?}",
                self.shape
            )));
        };
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }
}
