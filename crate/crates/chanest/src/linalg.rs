//! Complex matrix primitives and deterministic random streams.
//!
//! Every matrix-valued quantity in the simulator (correlation matrices,
//! per-subcarrier channels, reflection patterns, covariances) is carried by
//! [`CMatrix`], a dense row-major matrix of `Complex64`. The handful of
//! numerical routines the pipeline needs — Hermitian square root, Hermitian
//! solve, DFT matrix, complex Gaussian draws — live here so the physics
//! modules never touch a linear-algebra backend directly.
//!
//! Randomness goes through [`RngStream`], a counter-based ChaCha stream keyed
//! by `(master_seed, stream_id)`. Streams for different purposes are derived
//! by hashing a purpose tag, which keeps draws for one purpose (say, AWGN)
//! bit-identical when unrelated code starts consuming randomness elsewhere.

use num_complex::Complex64;
use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

/// Errors from the numerical routines in this module.
#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian: max deviation {max_dev:.3e} exceeds tolerance {tol:.1e}")]
    NotHermitian { max_dev: f64, tol: f64 },
    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:.6e}")]
    IndefiniteMatrix { eigenvalue: f64 },
    #[error("matrix is singular: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    SingularMatrix { pivot: f64, threshold: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Dense complex matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }

    /// Build a matrix by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        CMatrix { rows, cols, data }
    }

    /// Wrap an existing row-major buffer. Panics if the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "buffer length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        CMatrix { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn col_vector(v: &[Complex64]) -> Self {
        CMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
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
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// Immutable view of the row-major buffer.
    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Mutable view of the row-major buffer.
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// One row as a slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Matrix product `self * rhs`. Panics on incompatible shapes.
    pub fn mul(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(
            self.cols, rhs.rows,
            "cannot multiply {}x{} by {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        // i-k-j loop order keeps the inner loop contiguous in both `rhs` and
        // `out`, which is what lets the compiler vectorize it.
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "matrix-vector shape mismatch");
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = Complex64::new(0.0, 0.0);
            for (&a, &b) in row.iter().zip(v.iter()) {
                acc += a * b;
            }
            *o = acc;
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r).conj())
    }

    /// Plain transpose.
    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Entry-wise sum.
    pub fn add(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "shape mismatch in add"
        );
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Entry-wise difference.
    pub fn sub(&self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "shape mismatch in sub"
        );
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Scale by a complex factor.
    pub fn scale(&self, s: Complex64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Sum of the diagonal.
    pub fn trace(&self) -> Complex64 {
        assert_eq!(self.rows, self.cols, "trace of a non-square matrix");
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Max entry-wise deviation from Hermitian symmetry.
    pub fn hermitian_deviation(&self) -> f64 {
        assert_eq!(
            self.rows, self.cols,
            "Hermitian check on a non-square matrix"
        );
        let mut dev: f64 = 0.0;
        for r in 0..self.rows {
            for c in r..self.cols {
                let d = (self.get(r, c) - self.get(c, r).conj()).norm();
                dev = dev.max(d);
            }
        }
        dev
    }
}

fn to_na(m: &CMatrix) -> nalgebra::DMatrix<Complex64> {
    nalgebra::DMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c))
}

fn from_na(m: &nalgebra::DMatrix<Complex64>) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// Tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Most negative eigenvalue still treated as a rounding artifact of zero.
pub const EIGENVALUE_FLOOR: f64 = -1e-10;

/// Hermitian (principal) matrix square root via eigendecomposition.
///
/// Correlation matrices in this simulator are only positive *semi*definite —
/// the RIS spatial correlation at half-wavelength spacing is rank-deficient —
/// so a Cholesky factor does not exist in general. Eigenvalues within
/// [`EIGENVALUE_FLOOR`], 0) are clamped to zero; anything more negative is
/// reported as [`LinalgError::IndefiniteMatrix`].
pub fn hermitian_sqrt(c: &CMatrix) -> Result<CMatrix, LinalgError> {
    if c.rows() != c.cols() {
        return Err(LinalgError::DimensionMismatch(format!(
            "hermitian_sqrt needs a square matrix, got {}x{}",
            c.rows(),
            c.cols()
        )));
    }
    let dev = c.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian {
            max_dev: dev,
            tol: HERMITIAN_TOL,
        });
    }
    // Symmetrize before decomposing so sub-tolerance asymmetry cannot leak
    // into the factor.
    let n = c.rows();
    let sym = CMatrix::from_fn(n, n, |r, q| (c.get(r, q) + c.get(q, r).conj()) * 0.5);
    let eig = to_na(&sym).symmetric_eigen();
    let mut lambda = eig.eigenvalues.clone();
    for l in lambda.iter_mut() {
        if *l < EIGENVALUE_FLOOR {
            return Err(LinalgError::IndefiniteMatrix { eigenvalue: *l });
        }
        *l = l.max(0.0);
    }
    let v = &eig.eigenvectors;
    let sqrt_l = nalgebra::DMatrix::from_fn(n, n, |r, q| {
        if r == q {
            Complex64::new(lambda[r].sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let s = v * sqrt_l * v.adjoint();
    Ok(from_na(&s))
}

/// Solve `A X = B` for Hermitian positive-definite `A` via eigendecomposition.
///
/// An eigenvalue at or below `1e-12 * trace(A) / dim` is treated as a zero
/// pivot and reported as [`LinalgError::SingularMatrix`].
pub fn solve_hermitian(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, LinalgError> {
    if a.rows() != a.cols() {
        return Err(LinalgError::DimensionMismatch(format!(
            "solve_hermitian needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != b.rows() {
        return Err(LinalgError::DimensionMismatch(format!(
            "A is {}x{} but B has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let dev = a.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(LinalgError::NotHermitian {
            max_dev: dev,
            tol: HERMITIAN_TOL,
        });
    }
    let n = a.rows();
    let threshold = 1e-12 * a.trace().re / n as f64;
    let eig = to_na(a).symmetric_eigen();
    let mut min_pivot = f64::INFINITY;
    for l in eig.eigenvalues.iter() {
        min_pivot = min_pivot.min(*l);
    }
    if min_pivot.is_nan() || min_pivot <= threshold {
        return Err(LinalgError::SingularMatrix {
            pivot: min_pivot,
            threshold,
        });
    }
    // X = V diag(1/lambda) V^H B
    let v = &eig.eigenvectors;
    let vhb = v.adjoint() * to_na(b);
    let mut scaled = vhb;
    for r in 0..n {
        let inv = Complex64::new(1.0 / eig.eigenvalues[r], 0.0);
        for c in 0..scaled.ncols() {
            scaled[(r, c)] *= inv;
        }
    }
    let x = v * scaled;
    Ok(from_na(&x))
}

/// General inverse via Gauss-Jordan elimination with partial pivoting.
///
/// Used for small reflection-pattern matrices; correlation-sized problems go
/// through [`solve_hermitian`] instead.
pub fn invert(a: &CMatrix) -> Result<CMatrix, LinalgError> {
    if a.rows() != a.cols() {
        return Err(LinalgError::DimensionMismatch(format!(
            "invert needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut work = a.clone();
    let mut inv = CMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let threshold = 1e-13 * scale;
    for col in 0..n {
        // Partial pivot: largest magnitude in this column at or below the diagonal.
        let mut pivot_row = col;
        let mut pivot_mag = work.get(col, col).norm();
        for r in col + 1..n {
            let m = work.get(r, col).norm();
            if m > pivot_mag {
                pivot_mag = m;
                pivot_row = r;
            }
        }
        if pivot_mag <= threshold {
            return Err(LinalgError::SingularMatrix {
                pivot: pivot_mag,
                threshold,
            });
        }
        if pivot_row != col {
            for c in 0..n {
                let (x, y) = (work.get(col, c), work.get(pivot_row, c));
                work.set(col, c, y);
                work.set(pivot_row, c, x);
                let (x, y) = (inv.get(col, c), inv.get(pivot_row, c));
                inv.set(col, c, y);
                inv.set(pivot_row, c, x);
            }
        }
        let pivot = work.get(col, col);
        let pivot_inv = Complex64::new(1.0, 0.0) / pivot;
        for c in 0..n {
            work.set(col, c, work.get(col, c) * pivot_inv);
            inv.set(col, c, inv.get(col, c) * pivot_inv);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work.get(r, col);
            if factor.norm() == 0.0 {
                continue;
            }
            for c in 0..n {
                let w = work.get(r, c) - factor * work.get(col, c);
                work.set(r, c, w);
                let v = inv.get(r, c) - factor * inv.get(col, c);
                inv.set(r, c, v);
            }
        }
    }
    Ok(inv)
}

/// Square DFT matrix with entry `(m, t) = exp(-j 2 pi m t / size)`.
///
/// The first row and column are exactly one; the product `m*t` is reduced
/// modulo `size` before computing the angle so entries stay on the unit
/// circle to full precision even for large indices.
pub fn dft_matrix(size: usize) -> CMatrix {
    assert!(size > 0, "dft_matrix of size zero");
    CMatrix::from_fn(size, size, |m, t| {
        let k = (m * t) % size;
        if k == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            let angle = -2.0 * std::f64::consts::PI * (k as f64) / (size as f64);
            Complex64::new(libm::cos(angle), libm::sin(angle))
        }
    })
}

/// Matrix of i.i.d. `CN(0, 1)` entries (real and imaginary parts each have
/// variance 1/2), filled row-major from `rng`.
pub fn complex_gaussian(rows: usize, cols: usize, rng: &mut RngStream) -> CMatrix {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(rng.next_cn());
    }
    CMatrix { rows, cols, data }
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Collapse `(master_seed, trial, purpose)` into a single seed value, for
/// components that take a scalar seed rather than a stream (derived with the
/// same hashing as [`RngStream::for_purpose`], so seeds for different
/// purposes or trials are decorrelated).
pub fn derive_seed(master_seed: u64, trial: u64, purpose: &str) -> u64 {
    let mut state = fnv1a(purpose.as_bytes()) ^ trial.wrapping_mul(0xa24baed4963ee407);
    splitmix64(&mut state) ^ master_seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Deterministic random stream keyed by `(master_seed, stream_id)`.
///
/// The generator is ChaCha12 seeded by mixing the two keys, so the sequence
/// for a given key pair is identical on every platform and every run.
/// Gaussian draws use Box-Muller with `libm` transcendentals to keep even the
/// floating-point path platform-independent.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut state = master_seed ^ stream_id.rotate_left(17) ^ 0x5851f42d4c957f2d;
        // Decorrelate nearby key pairs before filling the 256-bit seed.
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStream {
            master_seed,
            stream_id,
            rng: ChaCha12Rng::from_seed(seed),
            spare_normal: None,
        }
    }

    /// Stream for a named purpose within a trial. Every random quantity in
    /// the simulator gets its own purpose tag, so draws for one purpose are
    /// unaffected by how much randomness other purposes consume.
    pub fn for_purpose(master_seed: u64, trial: u64, purpose: &str) -> Self {
        let mut state = fnv1a(purpose.as_bytes()) ^ trial.wrapping_mul(0xa24baed4963ee407);
        let id = splitmix64(&mut state);
        RngStream::new(master_seed, id)
    }

    /// Derive an independent child stream; the parent's draw position does
    /// not matter, only its identity.
    pub fn child(&self, tag: &str) -> Self {
        let mut state = self.stream_id ^ fnv1a(tag.as_bytes());
        let id = splitmix64(&mut state);
        RngStream::new(self.master_seed, id)
    }

    #[inline]
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    #[inline]
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`, safe to pass through `ln`.
    #[inline]
    fn next_f64_open(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard real normal `N(0, 1)` via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u = self.next_f64_open();
        let v = self.next_f64();
        let r = (-2.0 * libm::log(u)).sqrt();
        let angle = 2.0 * std::f64::consts::PI * v;
        self.spare_normal = Some(r * libm::sin(angle));
        r * libm::cos(angle)
    }

    /// Circularly-symmetric complex normal `CN(0, 1)`: real and imaginary
    /// parts are independent `N(0, 1/2)`.
    pub fn next_cn(&mut self) -> Complex64 {
        let u = self.next_f64_open();
        let v = self.next_f64();
        let r = (-libm::log(u)).sqrt();
        let angle = 2.0 * std::f64::consts::PI * v;
        Complex64::new(r * libm::cos(angle), r * libm::sin(angle))
    }
}
