//! Dense real/complex linear algebra kernels and seeded sampling.
//!
//! All random draws go through [`RngStream`], a thin wrapper over ChaCha8
//! (`rand_chacha::ChaCha8Rng`) seeded with `seed_from_u64`. Child streams are
//! derived with [`RngStream::split`], which mixes the parent seed and a child
//! index through SplitMix64, so trials running in parallel never share state.
//! Gaussian variates come from `rand_distr::StandardNormal`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Scalar field of a problem: real problems carry zero imaginary parts and
/// their global ambiguity is a sign instead of a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded random stream. Identical seeds give identical sample sequences.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream. Depends only on the parent seed and `index`,
    /// never on how many samples the parent has already produced.
    pub fn split(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))))
    }

    /// Child stream addressed by a path of indices, e.g. `(grid point, trial)`.
    pub fn split_path(&self, path: &[u64]) -> RngStream {
        path.iter().fold(self.clone(), |s, &i| s.split(i))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random::<u64>()
    }
}

/// I.i.d. Gaussian vector. Real field: standard normal entries. Complex
/// field: real and imaginary parts independent `N(0, 1/2)`, so `E|v_k|^2 = 1`.
pub fn sample_gaussian(rng: &mut RngStream, n: usize, field: Field) -> CVector {
    match field {
        Field::Real => CVector::from_fn(n, |_, _| C64::new(rng.standard_normal(), 0.0)),
        Field::Complex => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            CVector::from_fn(n, |_, _| {
                let re = rng.standard_normal();
                let im = rng.standard_normal();
                C64::new(s * re, s * im)
            })
        }
    }
}

/// Uniform point on the unit sphere of the given field.
pub fn sample_unit_sphere(rng: &mut RngStream, n: usize, field: Field) -> CVector {
    loop {
        let v = sample_gaussian(rng, n, field);
        let norm = v.norm();
        if norm > 0.0 {
            return v / C64::from(norm);
        }
    }
}

/// `<u, v> = u* v`, conjugate-linear in the first slot.
#[inline]
pub fn inner(u: &CVector, v: &CVector) -> C64 {
    u.dotc(v)
}

/// Dense Hermitian matrix. Symmetry is enforced exactly at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    /// Builds from the upper triangle of `m`; the lower triangle is overwritten
    /// with conjugates and the diagonal made real.
    pub fn from_upper(mut m: CMatrix) -> Self {
        assert!(m.is_square(), "Hermitian matrix must be square");
        let n = m.nrows();
        for k in 0..n {
            m[(k, k)] = C64::new(m[(k, k)].re, 0.0);
            for l in (k + 1)..n {
                m[(l, k)] = m[(k, l)].conj();
            }
        }
        Self(m)
    }

    /// Accepts `m` if it is Hermitian up to `tol * ||m||_F`, then symmetrizes.
    pub fn try_new(m: CMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidDimension(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let defect = (&m - m.adjoint()).norm();
        if defect > tol * m.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidDimension(format!(
                "matrix is not Hermitian (defect {defect:.3e})"
            )));
        }
        let sym = (&m + m.adjoint()) * C64::from(0.5);
        Ok(Self::from_upper(sym))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::from(diag[i])
            } else {
                ZERO
            }
        }))
    }

    /// `z z*`.
    pub fn outer(z: &CVector) -> Self {
        Self::from_upper(z * z.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        &self.0 * v
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Real quadratic form `v* H v`.
    pub fn quadratic_form(&self, v: &CVector) -> f64 {
        inner(v, &self.apply(v)).re
    }

    pub fn negated(&self) -> Self {
        Self(-&self.0)
    }

    pub fn add(&self, other: &HermitianMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    /// Lower Gershgorin bound on the spectrum.
    fn gershgorin_lower(&self) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|k| {
                let off: f64 = (0..n).filter(|&l| l != k).map(|l| self.0[(k, l)].norm()).sum();
                self.0[(k, k)].re - off
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Largest algebraic eigenpair by shifted power iteration from a random start.
///
/// The iteration runs on `H + sI` with `s` the negated Gershgorin lower bound
/// (when negative), which makes the target eigenvalue the dominant one. For
/// the `z z* + W` family this is also the eigenvalue of largest modulus.
pub fn dominant_eigenvector(
    h: &HermitianMatrix,
    tol: f64,
    max_iter: usize,
    rng: &mut RngStream,
) -> Result<(f64, CVector)> {
    if h.dim() == 0 {
        return Err(Error::InvalidDimension("empty matrix".into()));
    }
    let start = sample_unit_sphere(rng, h.dim(), Field::Complex);
    power_iteration(h, &start, tol, max_iter)
}

/// Shifted power iteration from a caller-supplied start vector.
pub fn power_iteration(
    h: &HermitianMatrix,
    start: &CVector,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, CVector)> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let n = h.dim();
    if start.len() != n {
        return Err(Error::InvalidDimension(format!(
            "start vector has length {}, matrix is {n}x{n}",
            start.len()
        )));
    }
    let shift = (-h.gershgorin_lower()).max(0.0);
    let norm = start.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::NumericFailure("power iteration start vector is zero".into()));
    }
    let mut v = start / C64::from(norm);
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let hv = h.apply(&v);
        let lambda = inner(&v, &hv).re;
        residual = (&hv - &v * C64::from(lambda)).norm();
        if !residual.is_finite() {
            return Err(Error::NumericFailure("non-finite power iterate".into()));
        }
        if residual <= tol * (1.0 + lambda.abs()) {
            return Ok((lambda, v));
        }
        let next = hv + &v * C64::from(shift);
        let norm = next.norm();
        if !(norm > 0.0) {
            return Err(Error::NumericFailure("power iterate collapsed to zero".into()));
        }
        v = next / C64::from(norm);
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Full eigendecomposition `H = Q diag(lambda) Q*`, eigenvalues ascending.
pub fn hermitian_eigen(h: &HermitianMatrix) -> Result<(DVector<f64>, CMatrix)> {
    let n = h.dim();
    if n == 0 {
        return Ok((DVector::zeros(0), CMatrix::zeros(0, 0)));
    }
    if h.matrix().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericFailure("non-finite matrix entry".into()));
    }
    let eig = h.matrix().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("eigensolver produced non-finite values".into()));
    }
    Ok((values, vectors))
}

/// Top eigenpair from the full decomposition (robust to tiny spectral gaps).
pub fn top_eigenpair(h: &HermitianMatrix) -> Result<(f64, CVector)> {
    let (values, vectors) = hermitian_eigen(h)?;
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidDimension("empty matrix".into()));
    }
    Ok((values[n - 1], vectors.column(n - 1).into_owned()))
}

/// Thin QR factorization `B = Q R` of a tall full-column-rank matrix, kept
/// around so repeated solves against the same `B` cost `O(mn)` each.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    q: CMatrix,
    r: CMatrix,
}

impl LeastSquares {
    /// Smallest-to-largest singular value ratio below which `B` counts as rank deficient.
    pub const RANK_TOL: f64 = 1e-12;

    pub fn new(b: &CMatrix) -> Result<Self> {
        let (m, n) = b.shape();
        if n == 0 || m < n {
            return Err(Error::InvalidDimension(format!(
                "least squares needs m >= n >= 1, got {m}x{n}"
            )));
        }
        let qr = b.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let sv = r.singular_values();
        let largest = sv.max();
        let smallest = sv.min();
        let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
        if !(ratio > Self::RANK_TOL) {
            return Err(Error::RankDeficient { ratio });
        }
        Ok(Self { q, r })
    }

    pub fn nrows(&self) -> usize {
        self.q.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.r.ncols()
    }

    /// Orthonormal basis of `Range(B)`.
    pub fn q(&self) -> &CMatrix {
        &self.q
    }

    /// Coordinates `Q* y` of the projection of `y` onto `Range(B)`.
    pub fn coefficients(&self, y: &CVector) -> CVector {
        self.q.ad_mul(y)
    }

    /// Least-squares solution from range coordinates: `R^{-1} c`.
    pub fn solve_coefficients(&self, c: &CVector) -> CVector {
        self.r
            .solve_upper_triangular(c)
            .expect("R is nonsingular after the rank check")
    }

    pub fn solve(&self, y: &CVector) -> CVector {
        self.solve_coefficients(&self.coefficients(y))
    }

    /// Orthogonal projection of `y` onto `Range(B)`.
    pub fn project(&self, y: &CVector) -> CVector {
        &self.q * self.coefficients(y)
    }
}

/// `argmin_x ||Bx - y||` for tall full-column-rank `B`.
pub fn least_squares(b: &CMatrix, y: &CVector) -> Result<CVector> {
    if y.len() != b.nrows() {
        return Err(Error::InvalidDimension(format!(
            "right-hand side has length {}, matrix has {} rows",
            y.len(),
            b.nrows()
        )));
    }
    Ok(LeastSquares::new(b)?.solve(y))
}

/// Rough `||H||_op` from a few unshifted power steps (a lower estimate).
pub fn operator_norm_estimate(h: &HermitianMatrix, steps: usize, rng: &mut RngStream) -> f64 {
    let n = h.dim();
    if n == 0 {
        return 0.0;
    }
    let mut v = sample_unit_sphere(rng, n, Field::Complex);
    let mut estimate = 0.0;
    for _ in 0..steps.max(1) {
        let w = h.apply(&v);
        estimate = w.norm();
        if !(estimate > 0.0) {
            return 0.0;
        }
        v = w / C64::from(estimate);
    }
    estimate
}

/// Numerical rank: number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &CMatrix, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let largest = sv.max();
    if !(largest > 0.0) {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * largest).count()
}
