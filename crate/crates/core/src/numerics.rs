//! Dense vectors and matrices, activations, the seeded generator and weight
//! initializers.
//!
//! Everything is generic over [`Real`], which is implemented for `f32` and
//! `f64`. A run picks one precision and uses it throughout.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Floating point precision of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Scalar type used for all parameters and activations.
pub trait Real:
    Float + FromPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;

    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one value from the first `Self::BYTES` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Deterministic 64-bit generator.
///
/// Backed by xoshiro256++ seeded through SplitMix64, so a given seed yields
/// the same stream on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw on `[low, high)`.
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Derives an independent generator; used to give subsystems their own
    /// streams without coupling their draw counts.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Real> Vector<T> {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Vector { data }
    }

    pub fn filled(len: usize, value: T) -> Self {
        Vector {
            data: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Vector {
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Index of the largest entry; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }
}

impl<T> std::ops::Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> std::ops::IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} · {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                axpy(a, other.row(k), out.row_mut(r));
            }
        }
        out
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn tanh_act<T: Real>(x: T) -> T {
    x.tanh()
}

pub fn leaky_relu<T: Real>(x: T, leakiness: T) -> T {
    if x >= T::zero() {
        x
    } else {
        leakiness * x
    }
}

/// Derivative of [`leaky_relu`] with respect to its pre-activation.
pub fn leaky_relu_grad<T: Real>(x: T, leakiness: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        leakiness
    }
}

pub fn softmax<T: Real>(v: &Vector<T>) -> Vector<T> {
    let mut out = v.clone();
    softmax_in_place(out.as_mut_slice());
    out
}

/// Max-subtracted softmax, so the largest entry is exactly `exp(0) / Z` and
/// never underflows.
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    assert!(!v.is_empty(), "softmax of an empty vector");
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    let inv = T::one() / total;
    v.iter_mut().for_each(|x| *x = *x * inv);
}

/// Matrix-vector product. Panics with both shapes on a dimension mismatch.
pub fn matvec<T: Real>(m: &Matrix<T>, v: &Vector<T>) -> Vector<T> {
    assert_eq!(
        m.cols,
        v.len(),
        "matvec shape mismatch: matrix {}x{}, vector {}",
        m.rows,
        m.cols,
        v.len()
    );
    let mut out = Vector::zeros(m.rows);
    matvec_acc(m, v.as_slice(), out.as_mut_slice());
    out
}

/// `out += m · x`.
pub fn matvec_acc<T: Real>(m: &Matrix<T>, x: &[T], out: &mut [T]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o = *o + dot(m.row(r), x);
    }
}

/// `out += mᵀ · v`.
pub fn matvec_t_acc<T: Real>(m: &Matrix<T>, v: &[T], out: &mut [T]) {
    debug_assert_eq!(m.rows, v.len());
    debug_assert_eq!(m.cols, out.len());
    for (r, &a) in v.iter().enumerate() {
        if a != T::zero() {
            axpy(a, m.row(r), out);
        }
    }
}

/// `m += a ⊗ b` (rank-one update).
pub fn outer_acc<T: Real>(m: &mut Matrix<T>, a: &[T], b: &[T]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    for (r, &x) in a.iter().enumerate() {
        if x != T::zero() {
            axpy(x, b, m.row_mut(r));
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += a · x`.
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

/// Orthogonal initialization with gain 1.
///
/// A standard-Gaussian matrix is factored as `QR` (twice-iterated modified
/// Gram-Schmidt, which is numerically orthogonal to working precision) with
/// the signs of `R`'s diagonal folded into `Q`. The result has orthonormal
/// rows when `rows <= cols` and orthonormal columns otherwise.
pub fn orthogonal_init<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    assert!(
        rows >= 1 && cols >= 1,
        "orthogonal_init needs a non-empty shape"
    );
    // Work on the tall orientation: n vectors of length m, m >= n.
    let (m, n) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let mut gaussian = vec![0.0f64; m * n];
    for x in gaussian.iter_mut() {
        *x = rng.normal();
    }
    // Column j of the tall matrix lives at gaussian[j*m..(j+1)*m].
    let mut q = gaussian;
    for j in 0..n {
        for _pass in 0..2 {
            for k in 0..j {
                let (done, rest) = q.split_at_mut(j * m);
                let qk = &done[k * m..(k + 1) * m];
                let qj = &mut rest[..m];
                let proj: f64 = qk.iter().zip(qj.iter()).map(|(a, b)| a * b).sum();
                for (b, a) in qj.iter_mut().zip(qk) {
                    *b -= proj * a;
                }
            }
        }
        let col = &mut q[j * m..(j + 1) * m];
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Gram-Schmidt leaves R's diagonal positive, so no sign fix is needed.
        // A zero column has probability zero for Gaussian input.
        for x in col.iter_mut() {
            *x /= norm;
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..n {
        for i in 0..m {
            let v = T::from_f64_lossy(q[j * m + i]);
            if rows >= cols {
                out.set(i, j, v);
            } else {
                out.set(j, i, v);
            }
        }
    }
    out
}

/// Entries i.i.d. uniform on `[-L, L]` with `L = sqrt(6 / (rows + cols))`.
pub fn glorot_uniform_init<T: Real>(rows: usize, cols: usize, rng: &mut Rng) -> Matrix<T> {
    assert!(
        rows >= 1 && cols >= 1,
        "glorot_uniform_init needs a non-empty shape"
    );
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.uniform_range(-limit, limit)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::Rng;
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(100.0f64) - 1.0).abs() < 1e-12);
        assert!((sigmoid(1.0f64) - 0.7310585786).abs() < 1e-10);
        let low = sigmoid(-800.0f64);
        assert!(low.is_finite() && low >= 0.0);
    }

    #[test]
    fn tanh_values() {
        assert_eq!(tanh_act(0.0f64), 0.0);
        assert!((tanh_act(0.5f64) - 0.4621171573).abs() < 1e-10);
        for x in [0.1, 0.7, 2.5, 9.0] {
            assert_eq!(tanh_act(-x), -tanh_act(x));
        }
    }

    #[test]
    fn leaky_relu_branches() {
        assert_eq!(leaky_relu(3.0f64, 0.01), 3.0);
        assert!((leaky_relu(-1.0f64, 0.01) + 0.01).abs() < 1e-15);
        assert_eq!(leaky_relu(0.0f64, 0.01), 0.0);
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&Vector::from_vec(vec![0.0f64; 4]));
        assert!(u.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let big = softmax(&Vector::from_vec(vec![1000.0f64, 1000.0]));
        assert_eq!(big.as_slice(), &[0.5, 0.5]);
        let s = softmax(&Vector::from_vec(vec![0.0f64, 3.0f64.ln()]));
        assert!((s[0] - 0.25).abs() < 1e-12);
        assert!((s[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn matvec_examples() {
        let v = Vector::from_vec(vec![1.0f64, 2.0, 3.0]);
        assert_eq!(matvec(&Matrix::identity(3), &v), v);
        assert_eq!(matvec(&Matrix::zeros(2, 3), &v).as_slice(), &[0.0, 0.0]);
        let m = Matrix::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let r = matvec(&m, &Vector::from_vec(vec![1.0, 1.0]));
        assert_eq!(r.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "matrix 2x3, vector 2")]
    fn matvec_mismatch_reports_shapes() {
        let _ = matvec(&Matrix::<f64>::zeros(2, 3), &Vector::zeros(2));
    }

    #[test]
    fn orthogonal_square_and_wide() {
        let mut rng = Rng::new(7);
        let q: Matrix<f64> = orthogonal_init(4, 4, &mut rng);
        assert!(max_abs_diff(&q.transpose().matmul(&q), &Matrix::identity(4)) < 1e-6);
        let w: Matrix<f64> = orthogonal_init(2, 5, &mut rng);
        assert!(max_abs_diff(&w.matmul(&w.transpose()), &Matrix::identity(2)) < 1e-6);
        let t: Matrix<f64> = orthogonal_init(9, 3, &mut rng);
        assert!(max_abs_diff(&t.transpose().matmul(&t), &Matrix::identity(3)) < 1e-6);
    }

    #[test]
    fn orthogonal_is_deterministic() {
        let a: Matrix<f64> = orthogonal_init(6, 6, &mut Rng::new(11));
        let b: Matrix<f64> = orthogonal_init(6, 6, &mut Rng::new(11));
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let limit = (6.0f64 / 1109.0).sqrt();
        let m: Matrix<f64> = glorot_uniform_init(1024, 85, &mut Rng::new(3));
        assert!(m.as_slice().iter().all(|x| x.abs() <= limit));
        let again: Matrix<f64> = glorot_uniform_init(1024, 85, &mut Rng::new(3));
        assert_eq!(m, again);
    }

    #[test]
    fn glorot_mean_is_zero() {
        // Uniform on [-L, L] has variance L^2 / 3.
        let mut rng = Rng::new(5);
        let n = 100_000usize;
        let draws = n / 4;
        let mut total = 0.0;
        for _ in 0..draws {
            let m: Matrix<f64> = glorot_uniform_init(2, 2, &mut rng);
            total += m.as_slice().iter().sum::<f64>();
        }
        let mean = total / n as f64;
        let limit = (6.0f64 / 4.0).sqrt();
        let se = (limit * limit / 3.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_eq!(a.normal().to_bits(), b.normal().to_bits());
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&Vector::from_vec(v.clone()));
            prop_assert!((p.sum() - 1.0).abs() < 1e-9);
            prop_assert!(p.as_slice().iter().all(|&x| x > 0.0));
            let q = softmax(&Vector::from_vec(v.iter().map(|x| x + shift).collect()));
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert_eq!(p.argmax(), Vector::from_vec(v).argmax());
        }

        #[test]
        fn matvec_is_linear(
            entries in prop::collection::vec(-3.0f64..3.0, 12),
            u in prop::collection::vec(-3.0f64..3.0, 4),
            v in prop::collection::vec(-3.0f64..3.0, 4),
            a in -5.0f64..5.0,
        ) {
            let m = Matrix::from_vec(3, 4, entries);
            let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + y).collect();
            let lhs = matvec(&m, &Vector::from_vec(combo));
            let mu = matvec(&m, &Vector::from_vec(u));
            let mv = matvec(&m, &Vector::from_vec(v));
            for i in 0..3 {
                prop_assert!((lhs[i] - (a * mu[i] + mv[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn orthogonal_gram_is_identity(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
            let m: Matrix<f64> = orthogonal_init(rows, cols, &mut Rng::new(seed));
            let gram = if rows <= cols { m.matmul(&m.transpose()) } else { m.transpose().matmul(&m) };
            let n = rows.min(cols);
            prop_assert!(max_abs_diff(&gram, &Matrix::identity(n)) < 1e-6);
        }
    }
}
