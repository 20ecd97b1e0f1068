//! Dense row-major tensors and the numeric kernels the model is built from.
//!
//! Kernels operate on the trailing two dimensions; everything in the model
//! is a `[rows x cols]` matrix. Every kernel rejects non-finite results.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{dim_err, Error, Result};
use crate::ledger::FlopLedger;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Floating-point element type. `f64` is the default; `f32` is used for
/// benchmarks.
pub trait Element:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const BYTES: usize;
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping (for `c`)
    /// matrices of the stated sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }
}

impl Element for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided view of a matrix inside a flat buffer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        MatRef { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `out = alpha * a * b + beta * out` where `out` is a strided view into a
/// mutable buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<T: Element>(
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    out: &mut [T],
    rsc: usize,
    csc: usize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.data.len() > a.last_index() || k == 0);
    assert!(b.data.len() > b.last_index() || k == 0);
    assert!(out.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: bounds asserted above; `out` is exclusively borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        )
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor, checking `product(shape) == data.len()` and that all
    /// values are finite.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return dim_err(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            ));
        }
        ensure_finite(&data, "Tensor::new")?;
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return dim_err("ragged rows");
        }
        let data = rows.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect();
        Self::new(vec![r, c], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![T::zero(); n] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimensions collapsed: the number of rows of the trailing
    /// matrix view.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub(crate) fn view(&self) -> MatRef<'_, T> {
        MatRef::row_major(&self.data, self.rows(), self.cols())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().expect("finite")))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().expect("finite")).collect()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return dim_err(format!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64().unwrap() - b.to_f64().unwrap()).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn ensure_finite<T: Element>(data: &[T], op: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn require_matrix<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return dim_err(format!("{what}: expected a matrix, got shape {:?}", t.shape));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// Matrix product `a[m x k] * b[k x n]`; charges `m*k*n` to `full_flops`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>, ledger: &mut FlopLedger) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "matmul lhs")?;
    let (k2, n) = require_matrix(b, "matmul rhs")?;
    if k != k2 {
        return dim_err(format!("matmul inner dimensions {k} vs {k2}"));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(T::one(), a.view(), b.view(), T::zero(), &mut out, n, 1);
    ledger.charge_flops((m * k * n) as u64);
    ensure_finite(&out, "matmul")?;
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a[m x k] * b[n x k]^T`.
pub fn matmul_nt<T: Element>(a: &Tensor<T>, b: &Tensor<T>, ledger: &mut FlopLedger) -> Result<Tensor<T>> {
    let (m, k) = require_matrix(a, "matmul_nt lhs")?;
    let (n, k2) = require_matrix(b, "matmul_nt rhs")?;
    if k != k2 {
        return dim_err(format!("matmul_nt inner dimensions {k} vs {k2}"));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(T::one(), a.view(), b.view().t(), T::zero(), &mut out, n, 1);
    ledger.charge_flops((m * k * n) as u64);
    ensure_finite(&out, "matmul_nt")?;
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a[k x m]^T * b[k x n]`.
pub fn matmul_tn<T: Element>(a: &Tensor<T>, b: &Tensor<T>, ledger: &mut FlopLedger) -> Result<Tensor<T>> {
    let (k, m) = require_matrix(a, "matmul_tn lhs")?;
    let (k2, n) = require_matrix(b, "matmul_tn rhs")?;
    if k != k2 {
        return dim_err(format!("matmul_tn inner dimensions {k} vs {k2}"));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(T::one(), a.view().t(), b.view(), T::zero(), &mut out, n, 1);
    ledger.charge_flops((m * k * n) as u64);
    ensure_finite(&out, "matmul_tn")?;
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Stable softmax of one row in place (max subtraction).
pub(crate) fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Row-wise softmax over the last dimension.
pub fn softmax_rows<T: Element>(m: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_finite(&m.data, "softmax_rows input")?;
    let c = m.cols();
    if c == 0 {
        return dim_err("softmax over an empty row");
    }
    let mut out = m.data.clone();
    for row in out.chunks_mut(c) {
        softmax_in_place(row);
    }
    ensure_finite(&out, "softmax_rows")?;
    Ok(Tensor::from_parts(m.shape.clone(), out))
}

/// Per-row statistics saved by [`layer_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Layer normalization over the last dimension with epsilon `1e-5`.
pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, NormStats<T>)> {
    let d = x.cols();
    if d == 0 || x.shape.is_empty() {
        return dim_err("layer_norm over a zero-width dimension");
    }
    if gain.len() != d || bias.len() != d {
        return dim_err(format!(
            "layer_norm width {d} vs gain {} / bias {}",
            gain.len(),
            bias.len()
        ));
    }
    let eps = T::from_f64_lossy(LAYER_NORM_EPS);
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let rows = x.rows();
    let mut out = vec![T::zero(); x.len()];
    let mut mean = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for (xr, or) in x.data.chunks(d).zip(out.chunks_mut(d)) {
        let mu = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        for j in 0..d {
            or[j] = (xr[j] - mu) * r * gain.data[j] + bias.data[j];
        }
        mean.push(mu);
        rstd.push(r);
    }
    ensure_finite(&out, "layer_norm")?;
    Ok((Tensor::from_parts(x.shape.clone(), out), NormStats { mean, rstd }))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu_scalar<T: Element>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

pub fn gelu<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out: Vec<T> = x.data.iter().map(|&v| gelu_scalar(v)).collect();
    ensure_finite(&out, "gelu")?;
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return dim_err(format!("add {:?} vs {:?}", a.shape, b.shape));
    }
    let out: Vec<T> = a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect();
    ensure_finite(&out, "add")?;
    Ok(Tensor::from_parts(a.shape.clone(), out))
}

/// Adds a length-`cols` vector to every row.
pub fn add_row_vector<T: Element>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.cols();
    if b.len() != c {
        return dim_err(format!("bias of length {} for width {c}", b.len()));
    }
    let mut out = x.data.clone();
    for row in out.chunks_mut(c) {
        for (v, &bb) in row.iter_mut().zip(&b.data) {
            *v = *v + bb;
        }
    }
    ensure_finite(&out, "add_row_vector")?;
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

/// Rows `[start, end)` of a matrix.
pub fn slice_rows<T: Element>(x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (r, c) = require_matrix(x, "slice_rows")?;
    if start > end || end > r {
        return dim_err(format!("row range {start}..{end} out of {r}"));
    }
    Ok(Tensor::from_parts(vec![end - start, c], x.data[start * c..end * c].to_vec()))
}

pub fn concat_rows<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let c = match parts.first() {
        Some(p) => p.cols(),
        None => return dim_err("concat of zero tensors"),
    };
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        let (r, pc) = require_matrix(p, "concat_rows")?;
        if pc != c {
            return dim_err(format!("concat widths {pc} vs {c}"));
        }
        rows += r;
        data.extend_from_slice(&p.data);
    }
    Ok(Tensor::from_parts(vec![rows, c], data))
}

/// Gathers rows of `table` by index.
pub fn gather_rows<T: Element>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let (v, d) = require_matrix(table, "gather_rows")?;
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return dim_err(format!("token id {id} outside vocabulary of {v}"));
        }
        data.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), d], data))
}

/// Fixed sinusoidal encoding for absolute positions `start..start+len`.
pub fn sinusoidal_positions<T: Element>(start: usize, len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for p in start..start + len {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / d as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            data.push(T::from_f64_lossy(v));
        }
    }
    Tensor::from_parts(vec![len, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(i, p) * b.get(p, j);
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]), Err(Error::Dimension(_))));
        assert!(matches!(
            Tensor::<f64>::new(vec![1], vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut l = FlopLedger::new();
        let m = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &m, &mut l).unwrap(), m);
        let col = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let out = matmul(&m, &col, &mut l).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0]);
        assert_eq!(l.full_flops(), 8 + 4);
    }

    #[test]
    fn matmul_matches_triple_loop_3x4x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let out = matmul(&a, &b, &mut FlopLedger::new()).unwrap();
        for (x, y) in out.data().iter().zip(triple_loop(&a, &b)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 3]);
        assert!(matches!(matmul(&a, &b, &mut FlopLedger::new()), Err(Error::Dimension(_))));
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = FlopLedger::new();
        let a = random(5, 3, &mut rng);
        let b = random(4, 3, &mut rng);
        let bt = Tensor::matrix(3, 4, (0..12).map(|i| b.get(i % 4, i / 4)).collect()).unwrap();
        let nt = matmul_nt(&a, &b, &mut l).unwrap();
        let plain = matmul(&a, &bt, &mut l).unwrap();
        assert!(nt.max_abs_diff(&plain) < 1e-14);
        let at = Tensor::matrix(3, 5, (0..15).map(|i| a.get(i % 5, i / 5)).collect()).unwrap();
        let tn = matmul_tn(&at, &bt, &mut l).unwrap();
        assert!(tn.max_abs_diff(&plain) < 1e-14);
    }

    #[test]
    fn softmax_closed_forms() {
        let s = softmax_rows(&Tensor::<f64>::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap()).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&Tensor::<f64>::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap()).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        let big = softmax_rows(&Tensor::<f64>::from_rows(&[vec![1000.0, 1001.0]]).unwrap()).unwrap();
        let small = softmax_rows(&Tensor::<f64>::from_rows(&[vec![0.0, 1.0]]).unwrap()).unwrap();
        assert!(big.max_abs_diff(&small) < 1e-15);
    }

    #[test]
    fn softmax_empty_row_is_error() {
        let t = Tensor::<f64>::zeros(vec![2, 0]);
        assert!(matches!(softmax_rows(&t), Err(Error::Dimension(_))));
    }

    #[test]
    fn layer_norm_cases() {
        let g = Tensor::<f64>::new(vec![3], vec![1.0; 3]).unwrap();
        let b = Tensor::<f64>::zeros(vec![3]);
        let (out, _) = layer_norm(&Tensor::from_rows(&[vec![2.0, 2.0, 2.0]]).unwrap(), &g, &b).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));

        let g2 = Tensor::<f64>::new(vec![2], vec![1.0; 2]).unwrap();
        let b2 = Tensor::<f64>::zeros(vec![2]);
        let (out, _) = layer_norm(&Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap(), &g2, &b2).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out.data()[0] - expect).abs() < 1e-15);
        assert!((out.data()[1] + expect).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(4, 7, &mut rng);
        let g = random(1, 7, &mut rng).reshape(vec![7]).unwrap();
        let b = random(1, 7, &mut rng).reshape(vec![7]).unwrap();
        let (out, _) = layer_norm(&x, &g, &b).unwrap();
        for i in 0..4 {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / 7.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
            for (j, r) in row.iter().enumerate() {
                let want = (r - mean) / (var + 1e-5).sqrt() * g.data()[j] + b.data()[j];
                assert!((out.get(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn layer_norm_zero_width_is_error() {
        let x = Tensor::<f64>::zeros(vec![2, 0]);
        let g = Tensor::<f64>::zeros(vec![0]);
        assert!(matches!(layer_norm(&x, &g, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            row in proptest::collection::vec(-50.0f64..50.0, 1..24),
            shift in -100.0f64..100.0,
        ) {
            let t = Tensor::matrix(1, row.len(), row.clone()).unwrap();
            let s = softmax_rows(&t).unwrap();
            let sum: f64 = s.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.data().iter().all(|v| *v >= 0.0));
            let shifted = Tensor::matrix(1, row.len(), row.iter().map(|v| v + shift).collect()).unwrap();
            let s2 = softmax_rows(&shifted).unwrap();
            prop_assert!(s.max_abs_diff(&s2) < 1e-12);
        }

        #[test]
        fn matmul_matches_triple_loop(m in 1usize..16, k in 1usize..16, n in 1usize..16, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(m, k, &mut rng);
            let b = random(k, n, &mut rng);
            let out = matmul(&a, &b, &mut FlopLedger::new()).unwrap();
            for (x, y) in out.data().iter().zip(triple_loop(&a, &b)) {
                prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
            }
        }
    }
}
