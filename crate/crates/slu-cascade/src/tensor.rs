//! Dense rank-≤3 tensors of 64-bit reals plus the scalar kernels every
//! forward and backward pass is built from.
//!
//! The kernels here are the single source of arithmetic truth: the autodiff
//! tape and the raw (inference/streaming) paths call the same functions in
//! the same order, which is what makes streaming-vs-batch bitwise equality
//! achievable.

use crate::error::{Result, SluError};

/// Dense tensor, row-major, rank 0..=3. Rank 0 is a scalar with one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.len() > 3 {
            return Err(SluError::Contract(format!(
                "tensor rank {} exceeds 3",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(SluError::Contract(format!("zero dimension in {:?}", dims)));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(SluError::Shape {
                op: "tensor_new",
                left: dims,
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            dims,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            dims: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n.max(1)],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Accumulate into the grad buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        let g = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    /// Number of rows when viewed as a matrix of shape `[rows, row_len]`.
    /// Rank-1 tensors are a single row.
    pub fn num_rows(&self) -> usize {
        match self.dims.len() {
            0 | 1 => 1,
            2 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    /// Length of the trailing dimension.
    pub fn row_len(&self) -> usize {
        match self.dims.last() {
            Some(&d) => d,
            None => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Scalar kernels. Fixed iteration order; no fast-math, no reassociation
// beyond the explicit 4-way accumulator split in `dot`.
// ---------------------------------------------------------------------------

/// Dot product with four independent accumulators. The split is part of the
/// arithmetic contract: every caller gets the same summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// out[i] = dot(w.row(i), x); w is [rows × cols] row-major.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for i in 0..rows {
        out[i] = dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// c = a[m×k] · b[k×n], each element as an ordered dot over k.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    c.iter_mut().for_each(|v| *v = 0.0);
    // i-k-j loop order: the inner j-loop is an axpy over contiguous rows of b,
    // keeping accumulation for c[i][j] in ascending k order.
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            axpy(a[i * k + kk], &b[kk * n..(kk + 1) * n], crow);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_slice(x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = sigmoid(*v);
    }
}

pub fn tanh_slice(x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = v.tanh();
    }
}

pub fn relu_slice(x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = if *v > 0.0 { *v } else { 0.0 };
    }
}

pub fn add_slices(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

pub fn mul_slices(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = x * y;
    }
}

/// Numerically stable log-softmax of one row (max subtraction).
pub fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x {
        sum += (v - mx).exp();
    }
    let lse = mx + sum.ln();
    for (o, v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

/// Stable softmax of one row.
pub fn softmax_row(x: &[f64], out: &mut [f64]) {
    log_softmax_row(x, out);
    for o in out.iter_mut() {
        *o = o.exp();
    }
}

/// log(exp(a) + exp(b)) without overflow; handles -inf identities.
pub fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Index of the maximum element; ties broken by lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in xs.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(SluError::Shape { .. })
        ));
        assert!(Tensor::new(vec![1, 2, 3, 4], vec![0.0; 24]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn scalar_is_rank_zero() {
        let s = Tensor::scalar(2.5);
        assert_eq!(s.rank(), 0);
        assert!(s.is_scalar());
        assert_eq!(s.item(), 2.5);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.37 - 2.0).collect();
        let b: Vec<f64> = (0..13).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn matmul_identity() {
        let i2 = vec![1.0, 0.0, 0.0, 1.0];
        let m = vec![1.0, 2.0, 3.0, 4.0];
        let mut c = vec![0.0; 4];
        matmul(&i2, 2, 2, &m, 2, &mut c);
        assert_eq!(c, m);
    }

    #[test]
    fn log_softmax_uniform() {
        let x = [0.0, 0.0, 0.0];
        let mut out = [0.0; 3];
        log_softmax_row(&x, &mut out);
        for o in out {
            assert!((o - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_extreme_logits() {
        let x = [1000.0, 0.0];
        let mut out = [0.0; 2];
        log_softmax_row(&x, &mut out);
        assert!(out[0].abs() < 1e-12);
        assert!((out[1] + 1000.0).abs() < 1e-9);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lse2_handles_neg_inf() {
        assert_eq!(log_sum_exp2(f64::NEG_INFINITY, -1.0), -1.0);
        assert_eq!(log_sum_exp2(-1.0, f64::NEG_INFINITY), -1.0);
        let v = log_sum_exp2(-1.0, -1.0);
        assert!((v - (-1.0 + 2.0f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }
}
