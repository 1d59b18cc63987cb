//! Dense row-major tensors, activations and seeded randomness.
//!
//! Everything here is generic over [`Scalar`] so the same model code runs in
//! `f32` for training and `f64` for finite-difference gradient checks.
//! Matrix products go through `matrixmultiply`; [`affine`] and [`dot`] are
//! plain loops.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floating point element type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const NAME: &'static str;

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds matrices of the
    /// given sizes; `c` must not alias `a` or `b`.
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

    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
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

impl Scalar for f64 {
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

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} elements cannot form a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gather the listed rows into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Vector with the same finiteness contract as [`Tensor2`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor1<T>(pub Vec<T>);

impl<T: Scalar> Tensor1<T> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

impl<T> From<Vec<T>> for Tensor1<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

fn check_gemm_out<T: Scalar>(c: &Tensor2<T>, rows: usize, cols: usize) -> Result<()> {
    if c.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "gemm output is {:?}, expected ({rows}, {cols})",
            c.shape()
        )));
    }
    Ok(())
}

/// `c = a * b^T + beta * c` where `a` is `m x k` and `b` is `n x k`.
pub fn gemm_nt<T: Scalar>(a: &Tensor2<T>, b: &Tensor2<T>, beta: T, c: &mut Tensor2<T>) -> Result<()> {
    if a.cols != b.cols {
        return Err(Error::Dimension(format!(
            "a*b^T needs equal inner dims, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    check_gemm_out(c, a.rows, b.rows)?;
    let (m, k, n) = (a.rows, a.cols, b.rows);
    if m == 0 || n == 0 {
        return Ok(());
    }
    // SAFETY: shapes validated above, buffers are distinct allocations.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            k as isize,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

/// `c = a^T * b + beta * c` where `a` is `m x n` and `b` is `m x k`.
pub fn gemm_tn<T: Scalar>(a: &Tensor2<T>, b: &Tensor2<T>, beta: T, c: &mut Tensor2<T>) -> Result<()> {
    if a.rows != b.rows {
        return Err(Error::Dimension(format!(
            "a^T*b needs equal row counts, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    check_gemm_out(c, a.cols, b.cols)?;
    let (m, k, n) = (a.cols, a.rows, b.cols);
    if m == 0 || n == 0 {
        return Ok(());
    }
    // SAFETY: shapes validated above, buffers are distinct allocations.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            1,
            a.cols as isize,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

/// `c = a * b + beta * c` where `a` is `m x k` and `b` is `k x n`.
pub fn gemm_nn<T: Scalar>(a: &Tensor2<T>, b: &Tensor2<T>, beta: T, c: &mut Tensor2<T>) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "a*b needs a.cols == b.rows, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    check_gemm_out(c, a.rows, b.cols)?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return Ok(());
    }
    // SAFETY: shapes validated above, buffers are distinct allocations.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

/// Adds `bias` to every row of `t`.
pub fn add_row_bias<T: Scalar>(t: &mut Tensor2<T>, bias: &[T]) {
    debug_assert_eq!(t.cols, bias.len());
    for row in t.data.chunks_exact_mut(bias.len().max(1)) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

/// Column sums of `t` accumulated into `out`.
pub fn accumulate_col_sums<T: Scalar>(t: &Tensor2<T>, out: &mut [T]) {
    debug_assert_eq!(t.cols, out.len());
    for r in 0..t.rows {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += *v;
        }
    }
}

/// Inner product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ta.iter().zip(tb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `W x + b`.
pub fn affine<T: Scalar>(w: &Tensor2<T>, x: &Tensor1<T>, b: &Tensor1<T>) -> Result<Tensor1<T>> {
    if w.cols != x.len() || w.rows != b.len() {
        return Err(Error::Dimension(format!(
            "affine: W is {:?}, x has {}, b has {}",
            w.shape(),
            x.len(),
            b.len()
        )));
    }
    let out: Vec<T> = (0..w.rows)
        .map(|r| dot(w.row(r), x.as_slice()) + b.0[r])
        .collect();
    ensure_finite(&out, "affine")?;
    Ok(Tensor1(out))
}

pub(crate) fn ensure_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{what}: non-finite value {} at {i}", v[i])));
    }
    Ok(())
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_checked<T: Scalar>(z: T) -> Result<T> {
    if !z.is_finite() {
        return Err(Error::Numeric(format!("sigmoid of {z}")));
    }
    Ok(sigmoid(z))
}

pub fn relu<T: Scalar>(v: &Tensor1<T>) -> Result<Tensor1<T>> {
    ensure_finite(v.as_slice(), "relu input")?;
    Ok(Tensor1(v.0.iter().map(|x| x.max(T::zero())).collect()))
}

#[inline]
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = v.iter().map(|x| (*x - max).exp()).sum();
    max + s.ln()
}

/// Writes `softmax(v)` into `out`; no finiteness checks.
#[inline]
pub fn softmax_into<T: Scalar>(v: &[T], out: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, x) in out.iter_mut().zip(v) {
        *o = (*x - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o = *o / s;
    }
}

pub fn softmax<T: Scalar>(v: &Tensor1<T>) -> Result<Tensor1<T>> {
    ensure_finite(v.as_slice(), "softmax input")?;
    if v.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    let mut out = vec![T::zero(); v.len()];
    softmax_into(v.as_slice(), &mut out);
    Ok(Tensor1(out))
}

pub fn log_softmax<T: Scalar>(v: &Tensor1<T>) -> Result<Tensor1<T>> {
    ensure_finite(v.as_slice(), "log_softmax input")?;
    if v.is_empty() {
        return Err(Error::Dimension("log_softmax of an empty vector".into()));
    }
    let lse = log_sum_exp(v.as_slice());
    Ok(Tensor1(v.0.iter().map(|x| *x - lse).collect()))
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Seeded generator (ChaCha8) wrapped so the seed travels with it.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from the same seed.
    pub fn derive(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Self {
            seed: self.seed,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<U>(&mut self, items: &mut [U]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            items.swap(i, j);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitScheme {
    /// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    #[default]
    UniformFanIn,
    Uniform {
        bound: f64,
    },
    Zeros,
}

/// A `fan_out x fan_in` weight matrix.
pub fn init_params<T: Scalar>(rng: &mut Rng, fan_in: usize, fan_out: usize, scheme: InitScheme) -> Tensor2<T> {
    assert!(fan_in >= 1 && fan_out >= 1, "fan_in and fan_out must be >= 1");
    let bound = match scheme {
        InitScheme::UniformFanIn => 1.0 / (fan_in as f64).sqrt(),
        InitScheme::Uniform { bound } => bound,
        InitScheme::Zeros => return Tensor2::zeros(fan_out, fan_in),
    };
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.uniform(-bound, bound)))
        .collect();
    Tensor2 {
        rows: fan_out,
        cols: fan_in,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matvec(w: &Tensor2<f64>, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut s = 0.0;
            for c in 0..w.cols() {
                s += w.get(r, c) * x[c];
            }
            out[r] = s + b[r];
        }
        out
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn transpose(a: &Tensor2<f64>) -> Tensor2<f64> {
        let mut t = Tensor2::zeros(a.cols(), a.rows());
        for r in 0..a.rows() {
            for c in 0..a.cols() {
                t.set(c, r, a.get(r, c));
            }
        }
        t
    }

    #[test]
    fn affine_identity_and_hand_sum() {
        let w = Tensor2::<f64>::identity(2);
        let out = affine(&w, &Tensor1(vec![3.0, 4.0]), &Tensor1(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.0, vec![3.0, 4.0]);

        let w = Tensor2::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let out = affine(&w, &Tensor1(vec![2.0, 5.0]), &Tensor1(vec![-7.0])).unwrap();
        assert_eq!(out.0, vec![0.0]);
    }

    #[test]
    fn affine_matches_naive_loop() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let w: Tensor2<f64> = init_params(&mut rng, 2, 3, InitScheme::Uniform { bound: 3.0 });
            let x: Vec<f64> = (0..2).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let got = affine(&w, &Tensor1(x.clone()), &Tensor1(b.clone())).unwrap();
            let want = naive_matvec(&w, &x, &b);
            for (g, e) in got.0.iter().zip(&want) {
                assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0), "{g} vs {e}");
            }
        }
    }

    #[test]
    fn affine_shape_errors() {
        let w = Tensor2::<f64>::zeros(2, 3);
        assert!(matches!(
            affine(&w, &Tensor1(vec![0.0; 2]), &Tensor1(vec![0.0; 2])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            affine(&w, &Tensor1(vec![0.0; 3]), &Tensor1(vec![0.0; 3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gemm_variants_match_naive() {
        let mut rng = Rng::new(5);
        let a: Tensor2<f64> = init_params(&mut rng, 7, 5, InitScheme::Uniform { bound: 1.0 });
        let b: Tensor2<f64> = init_params(&mut rng, 7, 4, InitScheme::Uniform { bound: 1.0 });
        // a * b^T
        let mut c = Tensor2::zeros(5, 4);
        gemm_nt(&a, &b, 0.0, &mut c).unwrap();
        let want = naive_matmul(a.as_slice(), transpose(&b).as_slice(), 5, 7, 4);
        for (g, e) in c.as_slice().iter().zip(&want) {
            assert!((g - e).abs() < 1e-12);
        }
        // a^T * a2 with accumulation
        let a2: Tensor2<f64> = init_params(&mut rng, 3, 5, InitScheme::Uniform { bound: 1.0 });
        let mut c = Tensor2::zeros(7, 3);
        c.fill(1.0);
        gemm_tn(&a, &a2, 1.0, &mut c).unwrap();
        let want = naive_matmul(transpose(&a).as_slice(), a2.as_slice(), 7, 5, 3);
        for (g, e) in c.as_slice().iter().zip(&want) {
            assert!((g - (e + 1.0)).abs() < 1e-12);
        }
        let mut c = Tensor2::zeros(5, 4);
        let bt = transpose(&b);
        gemm_nn(&a, &bt, 0.0, &mut c).unwrap();
        let want = naive_matmul(a.as_slice(), bt.as_slice(), 5, 7, 4);
        for (g, e) in c.as_slice().iter().zip(&want) {
            assert!((g - e).abs() < 1e-12);
        }
        assert!(gemm_nn(&a, &b, 0.0, &mut c).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(-800.0f64).is_finite());
        assert!(sigmoid_checked(f64::NAN).is_err());
        assert_eq!(relu(&Tensor1(vec![-1.0f64, 0.0, 2.0])).unwrap().0, vec![0.0, 0.0, 2.0]);
        assert_eq!(softmax(&Tensor1(vec![0.0f64, 0.0])).unwrap().0, vec![0.5, 0.5]);
        assert!(softmax(&Tensor1(vec![f64::INFINITY, 0.0])).is_err());
        assert!(relu(&Tensor1(vec![f64::NAN])).is_err());
    }

    #[test]
    fn sigmoid_is_monotone() {
        let mut prev = 0.0f64;
        for i in -400..=400 {
            let s = sigmoid(i as f64 * 0.1);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn init_bounds_and_determinism() {
        let mut rng = Rng::new(3);
        let w: Tensor2<f64> = init_params(&mut rng, 784, 128, InitScheme::UniformFanIn);
        assert!(w.rows() * w.cols() >= 100_000);
        let bound = 1.0 / 28.0;
        assert!(w.as_slice().iter().all(|v| v.abs() <= bound));

        let a: Tensor2<f32> = init_params(&mut Rng::new(9), 10, 4, InitScheme::UniformFanIn);
        let b: Tensor2<f32> = init_params(&mut Rng::new(9), 10, 4, InitScheme::UniformFanIn);
        let c: Tensor2<f32> = init_params(&mut Rng::new(10), 10, 4, InitScheme::UniformFanIn);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let mut v: Vec<usize> = (0..100).collect();
        Rng::new(1).shuffle(&mut v);
        let mut w: Vec<usize> = (0..100).collect();
        Rng::new(1).shuffle(&mut w);
        assert_eq!(v, w);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn dot_handles_tails() {
        for n in 0..20 {
            let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            let want: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert_eq!(dot(&a, &b), want);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_is_a_probability_vector(v in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
                let p = softmax(&Tensor1(v)).unwrap();
                let s: f64 = p.0.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
                prop_assert!(p.0.iter().all(|x| *x >= 0.0));
            }
        }
    }
}
