//! Factorized unit-diagonal SDPs solved by Riemannian gradient descent.
//!
//! The SDP `min Tr(C U) s.t. U >= 0, U_kk = 1` is replaced by
//! `min_V Re Tr(C V V*)` over `N x p` factors with unit-norm rows (a product
//! of complex spheres). Tangent vectors at `V` are matrices `H` whose rows
//! satisfy `Re <v_k, h_k> = 0`; the retraction renormalizes rows.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    hermitian_eigen, numerical_rank, operator_norm_estimate, sample_unit_sphere, CMatrix, CVector,
    Field, HermitianMatrix, LeastSquares, RngStream, C64, ZERO,
};
use crate::phase_sync::torus_project;
use crate::problems::{PhaseRetrievalInstance, SolveReport, SyncInstance};

/// Where a unit-diagonal SDP came from; decides how factors are rounded.
#[derive(Debug, Clone)]
pub enum Provenance {
    PhaseCut(Box<PhaseRetrievalInstance>),
    Sync(Box<SyncInstance>),
    Raw,
}

/// `min Tr(C U)` over `U >= 0` with unit diagonal; `N` affine constraints.
#[derive(Debug, Clone)]
pub struct UnitDiagSdp {
    pub cost: HermitianMatrix,
    pub provenance: Provenance,
    /// `(b, Q)` with `C = Diag(b) (I - Q Q*) Diag(b)`, for PhaseCut costs.
    factors: Option<(DVector<f64>, CMatrix)>,
}

impl UnitDiagSdp {
    pub fn raw(cost: HermitianMatrix) -> Self {
        Self {
            cost,
            provenance: Provenance::Raw,
            factors: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    /// `C M`, through the factored form when one is known.
    pub fn apply(&self, m: &CMatrix) -> CMatrix {
        match &self.factors {
            Some((b, q)) => {
                let mut dm = m.clone();
                for (k, &bk) in b.iter().enumerate() {
                    dm.row_mut(k).scale_mut(bk);
                }
                let mut out = &dm - q * q.ad_mul(&dm);
                for (k, &bk) in b.iter().enumerate() {
                    out.row_mut(k).scale_mut(bk);
                }
                out
            }
            None => self.cost.matrix() * m,
        }
    }

    /// `f_C(V) = Re Tr(C V V*)`.
    pub fn objective(&self, v: &ObliqueFactor) -> f64 {
        v.matrix().dotc(&self.apply(v.matrix())).re
    }

    /// `Tr(C U)` for an explicit `U`.
    pub fn objective_of_matrix(&self, u: &CMatrix) -> f64 {
        (self.cost.matrix() * u).trace().re
    }
}

/// `N x p` factor with unit-norm rows, i.e. `diag(V V*) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObliqueFactor(CMatrix);

impl ObliqueFactor {
    pub fn new(v: CMatrix) -> Result<Self> {
        if let Some(k) = (0..v.nrows()).find(|&k| (v.row(k).norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Config(format!("row {k} of the factor is not unit norm")));
        }
        Ok(Self(v))
    }

    /// Rows drawn uniformly on the unit sphere of `C^p`.
    pub fn random(n: usize, p: usize, rng: &mut RngStream) -> Self {
        let mut v = CMatrix::zeros(n, p);
        for k in 0..n {
            let row = sample_unit_sphere(rng, p, Field::Complex);
            for j in 0..p {
                v[(k, j)] = row[j];
            }
        }
        Self(v)
    }

    /// Single-column factor from a unit-modulus vector.
    pub fn from_torus(z: &CVector) -> Result<Self> {
        Self::new(CMatrix::from_column_slice(z.len(), 1, z.as_slice()))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    /// `U = V V*`.
    pub fn gram(&self) -> CMatrix {
        &self.0 * self.0.adjoint()
    }
}

/// `C = Diag(b) (I - B B^+) Diag(b)`, so that for unit-modulus `u`,
/// `u* C u = min_x ||Diag(b) u - B x||^2`.
pub fn phasecut_cost(instance: &PhaseRetrievalInstance) -> Result<UnitDiagSdp> {
    let ls = LeastSquares::new(instance.matrix())?;
    let m = instance.m();
    let q = ls.q();
    let b = &instance.moduli;
    let projector = q * q.adjoint();
    let cost = CMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        (C64::from(id) - projector[(i, j)]) * (b[i] * b[j])
    });
    Ok(UnitDiagSdp {
        cost: HermitianMatrix::from_upper(cost),
        provenance: Provenance::PhaseCut(Box::new(instance.clone())),
        factors: Some((b.clone(), q.clone())),
    })
}

/// Synchronization as `min -Tr(C U)`.
pub fn sync_cost(instance: &SyncInstance) -> UnitDiagSdp {
    UnitDiagSdp {
        cost: instance.observations.negated(),
        provenance: Provenance::Sync(Box::new(instance.clone())),
        factors: None,
    }
}

/// Row-wise `Re <v_k, a_k>`.
fn row_real_inner(v: &CMatrix, a: &CMatrix) -> Vec<f64> {
    (0..v.nrows())
        .map(|k| {
            (0..v.ncols())
                .map(|j| (v[(k, j)].conj() * a[(k, j)]).re)
                .sum()
        })
        .collect()
}

/// Projection of the ambient matrix `a` onto the tangent space at `v`.
pub fn project_tangent(v: &ObliqueFactor, a: &CMatrix) -> CMatrix {
    let coeffs = row_real_inner(v.matrix(), a);
    let mut out = a.clone();
    for (k, c) in coeffs.into_iter().enumerate() {
        for j in 0..out.ncols() {
            out[(k, j)] -= v.matrix()[(k, j)] * c;
        }
    }
    out
}

fn grad_from_product(v: &ObliqueFactor, cv: &CMatrix) -> CMatrix {
    project_tangent(v, &(cv * C64::from(2.0)))
}

/// Riemannian gradient of `f_C` at `V`: the tangent projection of `2 C V`.
pub fn riemannian_grad(problem: &UnitDiagSdp, v: &ObliqueFactor) -> CMatrix {
    grad_from_product(v, &problem.apply(v.matrix()))
}

/// Rows of `V + H` renormalized; a zero row becomes `e_1`.
pub fn retract(v: &ObliqueFactor, h: &CMatrix) -> ObliqueFactor {
    let mut out = v.matrix() + h;
    for k in 0..out.nrows() {
        let norm = out.row(k).norm();
        if norm > 0.0 {
            out.row_mut(k).unscale_mut(norm);
        } else {
            out.row_mut(k).fill(ZERO);
            out[(k, 0)] = C64::from(1.0);
        }
    }
    ObliqueFactor(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RgdConfig {
    /// First trial step. `None` means `1 / (2 ||C||_op)` with a power-iteration
    /// estimate in `riemannian_gd`, and `1 / (2 ||C||_F)` in `riemannian_gd_from`.
    pub step0: Option<f64>,
    pub max_iter: usize,
    /// Stop once `||grad||_F < grad_tol * N`.
    pub grad_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for RgdConfig {
    fn default() -> Self {
        Self {
            step0: None,
            max_iter: 10_000,
            grad_tol: 1e-9,
            armijo: 1e-4,
            shrink: 0.5,
        }
    }
}

/// Riemannian gradient descent from random rows in `C^p`.
pub fn riemannian_gd(
    problem: &UnitDiagSdp,
    p: usize,
    rng: &mut RngStream,
    config: &RgdConfig,
) -> Result<(ObliqueFactor, SolveReport)> {
    let n = problem.dim();
    if p == 0 || p > n.max(1) {
        return Err(Error::Config(format!("factor rank must satisfy 1 <= p <= {n}, got {p}")));
    }
    let step0 = match config.step0 {
        Some(s) => s,
        None => default_step(problem, rng),
    };
    let v0 = ObliqueFactor::random(n, p, rng);
    riemannian_gd_from(problem, v0, &RgdConfig { step0: Some(step0), ..*config })
}

fn default_step(problem: &UnitDiagSdp, rng: &mut RngStream) -> f64 {
    let norm = operator_norm_estimate(&problem.cost, 30, &mut rng.split(u64::MAX));
    if norm > 0.0 {
        1.0 / (2.0 * norm)
    } else {
        1.0
    }
}

/// Armijo backtracking descent from `v0`.
///
/// The first line search starts at `step0`, later ones at a Barzilai-Borwein
/// step (the two classic formulas in turn). Each search shrinks `t` until
/// `f(R(V - t G)) <= f(V) - armijo * t * ||G||^2`, so the objective never
/// increases.
pub fn riemannian_gd_from(
    problem: &UnitDiagSdp,
    v0: ObliqueFactor,
    config: &RgdConfig,
) -> Result<(ObliqueFactor, SolveReport)> {
    let n = problem.dim();
    if v0.nrows() != n {
        return Err(Error::InvalidDimension(format!(
            "factor has {} rows, problem has dimension {n}",
            v0.nrows()
        )));
    }
    if !(config.grad_tol > 0.0) || !(config.shrink > 0.0 && config.shrink < 1.0) {
        return Err(Error::Config("need grad_tol > 0 and 0 < shrink < 1".into()));
    }
    let step0 = match config.step0 {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::Config(format!("step0 must be positive, got {s}"))),
        None => {
            let norm = problem.cost.frobenius_norm();
            if norm > 0.0 {
                1.0 / (2.0 * norm)
            } else {
                1.0
            }
        }
    };
    let threshold = config.grad_tol * n as f64;

    let mut v = v0;
    let cv = problem.apply(v.matrix());
    let mut f = v.matrix().dotc(&cv).re;
    let mut grad = grad_from_product(&v, &cv);
    let mut gnorm = grad.norm();
    let mut objective_trace = vec![f];
    let mut residual_trace = vec![gnorm];
    let mut iterations = 0;
    let mut converged = gnorm < threshold;
    let mut trial = step0;

    while !converged && iterations < config.max_iter {
        let g2 = gnorm * gnorm;
        let mut t = trial;
        let accepted = loop {
            let cand = retract(&v, &(&grad * C64::from(-t)));
            let cand_cv = problem.apply(cand.matrix());
            let cand_f = cand.matrix().dotc(&cand_cv).re;
            if cand_f <= f - config.armijo * t * g2 {
                break Some((cand, cand_cv, cand_f));
            }
            t *= config.shrink;
            if t < step0 * 1e-20 {
                break None;
            }
        };
        let Some((cand, cand_cv, cand_f)) = accepted else {
            break;
        };
        let next_grad = grad_from_product(&cand, &cand_cv);
        // Barzilai-Borwein guess for the next trial step, from ambient differences.
        let s_k = cand.matrix() - v.matrix();
        let y_k = &next_grad - &grad;
        let sy = s_k.dotc(&y_k).re;
        trial = if sy > 0.0 {
            // Alternate the two Barzilai-Borwein step formulas.
            let bb = if iterations % 2 == 1 {
                sy / y_k.norm_squared()
            } else {
                s_k.norm_squared() / sy
            };
            bb.min(step0 * 1e8)
        } else {
            2.0 * t
        };
        v = cand;
        f = cand_f;
        grad = next_grad;
        gnorm = grad.norm();
        iterations += 1;
        objective_trace.push(f);
        residual_trace.push(gnorm);
        converged = gnorm < threshold;
    }

    let estimate = round_factor(problem, &v)?;
    let rel_error_mod_phase = match &problem.provenance {
        Provenance::PhaseCut(inst) => inst.relative_error(&estimate),
        Provenance::Sync(inst) => Some(inst.relative_error(&estimate)),
        Provenance::Raw => None,
    };
    let report = SolveReport {
        estimate,
        rel_error_mod_phase,
        iterations,
        converged,
        residual_trace,
        objective_trace,
    };
    Ok((v, report))
}

/// Leading eigenvector of `V V*` scaled by the root of its eigenvalue, then
/// projected entrywise onto unit modulus. Synchronization and raw problems
/// return that vector; PhaseCut returns `argmin_x ||Bx - Diag(b) u||`.
pub fn round_factor(problem: &UnitDiagSdp, v: &ObliqueFactor) -> Result<CVector> {
    // V V* and V* V share their nonzero spectrum; eigenvector w of the p x p
    // Gram gives V w, an eigenvector of V V* with norm sqrt(lambda).
    let gram = HermitianMatrix::from_upper(v.matrix().ad_mul(v.matrix()));
    let (_, vectors) = hermitian_eigen(&gram)?;
    let top = vectors.column(vectors.ncols() - 1).into_owned();
    let u = torus_project(&(v.matrix() * top)).into_vector();
    match &problem.provenance {
        Provenance::PhaseCut(inst) => {
            let rhs = CVector::from_fn(u.len(), |k, _| u[k] * inst.moduli[k]);
            Ok(LeastSquares::new(inst.matrix())?.solve(&rhs))
        }
        Provenance::Sync(_) | Provenance::Raw => Ok(u),
    }
}

/// Sampled second-order criticality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SospCertificate {
    pub riemannian_grad_norm: f64,
    /// Smallest sampled Riemannian Hessian quadratic form (an upper bound on
    /// the true minimum over unit tangent directions).
    pub min_quadform: f64,
    pub trials: usize,
    pub factor_rank: usize,
}

/// Row-wise Lagrange multipliers `lambda_k = Re <v_k, (C V)_k>`.
fn multipliers(problem: &UnitDiagSdp, v: &ObliqueFactor) -> Vec<f64> {
    row_real_inner(v.matrix(), &problem.apply(v.matrix()))
}

/// Riemannian Hessian quadratic form `2 [Re Tr(H* C H) - sum_k lambda_k ||h_k||^2]`.
pub fn hessian_quadform(problem: &UnitDiagSdp, v: &ObliqueFactor, h: &CMatrix) -> f64 {
    let lambda = multipliers(problem, v);
    hessian_quadform_with(problem, &lambda, h)
}

fn hessian_quadform_with(problem: &UnitDiagSdp, lambda: &[f64], h: &CMatrix) -> f64 {
    let chh = h.dotc(&problem.apply(h)).re;
    let correction: f64 = lambda
        .iter()
        .enumerate()
        .map(|(k, l)| l * h.row(k).norm_squared())
        .sum();
    2.0 * (chh - correction)
}

/// Unit-Frobenius-norm random tangent direction at `v`.
pub fn random_tangent(v: &ObliqueFactor, rng: &mut RngStream) -> CMatrix {
    let (n, p) = v.matrix().shape();
    let raw = sample_unit_sphere(rng, n * p, Field::Complex);
    let ambient = CMatrix::from_column_slice(n, p, raw.as_slice());
    let h = project_tangent(v, &ambient);
    let norm = h.norm();
    if norm > 0.0 {
        h / C64::from(norm)
    } else {
        h
    }
}

/// Second central difference of `f_C` along `t -> R(V + t H)`.
pub fn retraction_second_difference(
    problem: &UnitDiagSdp,
    v: &ObliqueFactor,
    h: &CMatrix,
    t: f64,
) -> f64 {
    let plus = problem.objective(&retract(v, &(h * C64::from(t))));
    let minus = problem.objective(&retract(v, &(h * C64::from(-t))));
    (plus - 2.0 * problem.objective(v) + minus) / (t * t)
}

/// Evaluates the Hessian form on `trials` random unit tangent directions,
/// checking each value against a finite difference along the retraction.
pub fn sosp_probe(
    problem: &UnitDiagSdp,
    v: &ObliqueFactor,
    trials: usize,
    rng: &mut RngStream,
) -> Result<SospCertificate> {
    const FD_STEP: f64 = 1e-3;
    const FD_REL_TOL: f64 = 0.05;
    let lambda = multipliers(problem, v);
    let scale = problem.objective(v).abs() + problem.cost.frobenius_norm();
    let mut min_quadform = f64::INFINITY;
    for _ in 0..trials {
        let h = random_tangent(v, rng);
        let q = hessian_quadform_with(problem, &lambda, &h);
        let fd = retraction_second_difference(problem, v, &h, FD_STEP);
        if (q - fd).abs() > FD_REL_TOL * q.abs().max(fd.abs()) + 1e-7 * scale {
            return Err(Error::FdInconsistent { first: q, second: fd });
        }
        min_quadform = min_quadform.min(q);
    }
    Ok(SospCertificate {
        riemannian_grad_norm: riemannian_grad(problem, v).norm(),
        min_quadform,
        trials,
        factor_rank: numerical_rank(v.matrix(), 1e-8),
    })
}

/// `ceil(sqrt(2N)) + 1`, capped at `N`: large enough that `p(p+1)/2 > N`.
pub fn reference_rank(n: usize) -> usize {
    let p = ((2.0 * n as f64).sqrt().ceil() as usize) + 1;
    p.min(n.max(1))
}

/// Best of three high-rank descents; stands in for an interior-point SDP solve.
pub fn reference_sdp_solve(
    problem: &UnitDiagSdp,
    rng: &mut RngStream,
) -> Result<(f64, ObliqueFactor)> {
    reference_sdp_solve_with(problem, rng, &RgdConfig::default())
}

pub fn reference_sdp_solve_with(
    problem: &UnitDiagSdp,
    rng: &mut RngStream,
    config: &RgdConfig,
) -> Result<(f64, ObliqueFactor)> {
    if problem.dim() > 512 {
        return Err(Error::InvalidDimension(format!(
            "reference solver is limited to N <= 512, got {}",
            problem.dim()
        )));
    }
    let p = reference_rank(problem.dim());
    let mut best: Option<(f64, ObliqueFactor)> = None;
    for start in 0..3 {
        let (v, _) = riemannian_gd(problem, p, &mut rng.split(start), config)?;
        let value = problem.objective(&v);
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, v));
        }
    }
    Ok(best.expect("three starts were run"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_gaussian, least_squares};
    use crate::phase_sync::mle_objective;
    use crate::problems::{dist_mod_phase, gen_phase_retrieval, gen_sync, EnsembleKind};

    fn random_sdp(n: usize, rng: &mut RngStream) -> UnitDiagSdp {
        let g = CMatrix::from_fn(n, n, |_, _| C64::new(rng.standard_normal(), rng.standard_normal()));
        UnitDiagSdp::raw(HermitianMatrix::from_upper(&g + g.adjoint()))
    }

    #[test]
    fn phasecut_contract_and_psd() {
        let mut rng = RngStream::new(40);
        let inst = gen_phase_retrieval(5, 25, EnsembleKind::ComplexGaussian, &mut rng).unwrap();
        let sdp = phasecut_cost(&inst).unwrap();
        for _ in 0..10 {
            let u = torus_project(&sample_gaussian(&mut rng, 25, Field::Complex)).into_vector();
            let bu = CVector::from_fn(25, |k, _| u[k] * inst.moduli[k]);
            let x = least_squares(inst.matrix(), &bu).unwrap();
            let resid = (inst.matrix() * x - bu).norm_squared();
            let quad = sdp.cost.quadratic_form(&u);
            assert!((quad - resid).abs() <= 1e-8 * resid.max(1e-300), "{quad} vs {resid}");
        }
        let (values, _) = hermitian_eigen(&sdp.cost).unwrap();
        assert!(values[0] >= -1e-10 * sdp.cost.frobenius_norm());
        // The true phases give a zero residual.
        let truth = torus_project(&inst.ensemble.measure(inst.signal.as_ref().unwrap()));
        assert!(sdp.cost.quadratic_form(truth.as_vector()) < 1e-10 * sdp.cost.frobenius_norm());
    }

    #[test]
    fn factored_apply_matches_dense_cost() {
        let mut rng = RngStream::new(39);
        let inst = gen_phase_retrieval(4, 20, EnsembleKind::ComplexGaussian, &mut rng).unwrap();
        let sdp = phasecut_cost(&inst).unwrap();
        let v = ObliqueFactor::random(20, 3, &mut rng);
        let dense = sdp.cost.matrix() * v.matrix();
        assert!((sdp.apply(v.matrix()) - &dense).norm() < 1e-12 * dense.norm());
    }

    #[test]
    fn sync_cost_identities() {
        let inst = gen_sync(8, 0.0, &mut RngStream::new(41)).unwrap();
        let sdp = sync_cost(&inst);
        assert_eq!(sdp.cost.matrix(), &(-inst.observations.matrix()));
        let u = inst.signal.clone() * inst.signal.adjoint();
        assert!((sdp.objective_of_matrix(&u) + 64.0).abs() < 1e-10);

        let noisy = gen_sync(10, 0.5, &mut RngStream::new(42)).unwrap();
        let z = crate::phase_sync::gpm(&noisy, 200, 1e-12).unwrap();
        let last = z.history.last().unwrap();
        let sdp = sync_cost(&noisy);
        let factor = ObliqueFactor::from_torus(last.as_vector()).unwrap();
        assert!((sdp.objective(&factor) + mle_objective(&noisy.observations, last)).abs() < 1e-9);
    }

    #[test]
    fn gradient_vanishes_at_noiseless_truth_and_is_tangent() {
        let inst = gen_sync(12, 0.0, &mut RngStream::new(43)).unwrap();
        let sdp = sync_cost(&inst);
        let v = ObliqueFactor::from_torus(&inst.signal).unwrap();
        assert!(riemannian_grad(&sdp, &v).norm() < 1e-12);

        let mut rng = RngStream::new(44);
        let sdp = random_sdp(9, &mut rng);
        let v = ObliqueFactor::random(9, 3, &mut rng);
        let g = riemannian_grad(&sdp, &v);
        for t in row_real_inner(v.matrix(), &g) {
            assert!(t.abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_directional_derivative() {
        let mut rng = RngStream::new(45);
        let sdp = random_sdp(10, &mut rng);
        let v = ObliqueFactor::random(10, 3, &mut rng);
        let g = riemannian_grad(&sdp, &v);
        let f = |m: &CMatrix| m.dotc(&(sdp.cost.matrix() * m)).re;
        for _ in 0..10 {
            let h = random_tangent(&v, &mut rng);
            let eps = 1e-5;
            let fd = (f(&(v.matrix() + &h * C64::from(eps))) - f(&(v.matrix() - &h * C64::from(eps))))
                / (2.0 * eps);
            let exact = g.dotc(&h).re;
            assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
        }
    }

    #[test]
    fn retraction_properties() {
        let mut rng = RngStream::new(46);
        let v = ObliqueFactor::random(7, 2, &mut rng);
        assert!((retract(&v, &CMatrix::zeros(7, 2)).matrix() - v.matrix()).norm() < 1e-15);

        let z = torus_project(&sample_gaussian(&mut rng, 6, Field::Complex)).into_vector();
        let p1 = ObliqueFactor::from_torus(&z).unwrap();
        let h = random_tangent(&p1, &mut rng);
        let r = retract(&p1, &h);
        let expected = torus_project(&(&z + h.column(0)));
        assert!((r.matrix().column(0) - expected.as_vector()).norm() < 1e-14);

        let h = random_tangent(&v, &mut rng);
        let gap = |t: f64| (retract(&v, &(&h * C64::from(t))).matrix() - (v.matrix() + &h * C64::from(t))).norm();
        let ratio = gap(1e-2) / gap(1e-3);
        assert!((ratio - 100.0).abs() < 5.0, "second-order ratio {ratio}");

        let mut zero_row = CMatrix::zeros(2, 2);
        zero_row[(0, 0)] = C64::from(1.0);
        zero_row[(1, 1)] = C64::from(1.0);
        let w = ObliqueFactor::new(zero_row).unwrap();
        let mut kill = CMatrix::zeros(2, 2);
        kill[(1, 1)] = C64::from(-1.0);
        assert_eq!(retract(&w, &kill).matrix()[(1, 0)], C64::from(1.0));
    }

    #[test]
    fn descent_stays_feasible_and_monotone() {
        let mut rng = RngStream::new(47);
        let sdp = random_sdp(15, &mut rng);
        let (v, report) = riemannian_gd(&sdp, 4, &mut rng, &RgdConfig { max_iter: 300, ..RgdConfig::default() }).unwrap();
        for k in 0..15 {
            assert!((v.matrix().row(k).norm() - 1.0).abs() < 1e-10);
        }
        for w in report.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn gauge_invariance() {
        let mut rng = RngStream::new(48);
        let sdp = random_sdp(8, &mut rng);
        let v = ObliqueFactor::random(8, 3, &mut rng);
        let g = CMatrix::from_fn(3, 3, |_, _| C64::new(rng.standard_normal(), rng.standard_normal()));
        let q = g.qr().q();
        let rotated = ObliqueFactor(v.matrix() * q);
        assert!((sdp.objective(&v) - sdp.objective(&rotated)).abs() < 1e-10);
    }

    #[test]
    fn noiseless_sync_start_at_truth_stops_immediately() {
        let inst = gen_sync(10, 0.0, &mut RngStream::new(49)).unwrap();
        let sdp = sync_cost(&inst);
        let v = ObliqueFactor::from_torus(&inst.signal).unwrap();
        let (_, report) = riemannian_gd_from(&sdp, v, &RgdConfig::default()).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.rel_error_mod_phase.unwrap() < 1e-12);
    }

    #[test]
    fn rank_one_rounding() {
        let mut rng = RngStream::new(50);
        let z = torus_project(&sample_gaussian(&mut rng, 6, Field::Complex)).into_vector();
        let sdp = UnitDiagSdp::raw(HermitianMatrix::outer(&z));
        let out = round_factor(&sdp, &ObliqueFactor::from_torus(&z).unwrap()).unwrap();
        assert!(dist_mod_phase(&out, &z) < 1e-12);

        // p = 3 factor whose Gram is z z*.
        let inst = gen_sync(6, 0.0, &mut rng).unwrap();
        let dir = sample_unit_sphere(&mut rng, 3, Field::Complex);
        let v = ObliqueFactor::new(&inst.signal * dir.transpose()).unwrap();
        let out = round_factor(&sync_cost(&inst), &v).unwrap();
        assert!(dist_mod_phase(&out, &inst.signal) < 1e-10);
    }

    #[test]
    fn phasecut_pipeline_end_to_end() {
        let mut rng = RngStream::new(51);
        let inst = gen_phase_retrieval(8, 64, EnsembleKind::ComplexGaussian, &mut rng).unwrap();
        let sdp = phasecut_cost(&inst).unwrap();
        let truth = torus_project(&inst.ensemble.measure(inst.signal.as_ref().unwrap()));
        let v = ObliqueFactor::from_torus(truth.as_vector()).unwrap();
        let x = round_factor(&sdp, &v).unwrap();
        assert!(inst.relative_error(&x).unwrap() < 1e-6);
    }

    #[test]
    fn hessian_form_matches_retraction_differences() {
        let mut rng = RngStream::new(52);
        for _ in 0..10 {
            let sdp = random_sdp(8, &mut rng);
            let v = ObliqueFactor::random(8, 2, &mut rng);
            let cert = sosp_probe(&sdp, &v, 5, &mut rng).unwrap();
            assert_eq!(cert.trials, 5);
            assert_eq!(cert.factor_rank, 2);
        }
    }

    #[test]
    fn minimizer_is_second_order_critical() {
        let inst = gen_sync(12, 0.0, &mut RngStream::new(53)).unwrap();
        let sdp = sync_cost(&inst);
        let v = ObliqueFactor::from_torus(&inst.signal).unwrap();
        let cert = sosp_probe(&sdp, &v, 30, &mut RngStream::new(54)).unwrap();
        assert!(cert.riemannian_grad_norm < 1e-10);
        assert!(cert.min_quadform >= -1e-8 * 12.0);
    }

    #[test]
    fn reference_rank_satisfies_threshold() {
        for n in [2usize, 5, 20, 64, 256, 512] {
            let p = reference_rank(n);
            assert!(p * (p + 1) / 2 > n || p == n, "n={n} p={p}");
        }
    }

    #[test]
    fn reference_solve_noiseless_sync() {
        let inst = gen_sync(16, 0.0, &mut RngStream::new(55)).unwrap();
        let (value, _) = reference_sdp_solve(&sync_cost(&inst), &mut RngStream::new(56)).unwrap();
        assert!((value + 256.0).abs() < 1e-6 * 256.0, "value {value}");
    }

    #[test]
    fn p1_sync_limit_is_gpm_fixed_point() {
        let inst = gen_sync(20, 0.5, &mut RngStream::new(57)).unwrap();
        let sdp = sync_cost(&inst);
        let (v, report) = riemannian_gd(&sdp, 1, &mut RngStream::new(58), &RgdConfig::default()).unwrap();
        assert!(report.converged);
        let z = crate::phase_sync::TorusPoint::new(v.matrix().column(0).into_owned()).unwrap();
        let residual = crate::phase_sync::fixed_point_residual(&inst.observations, &z);
        assert!(residual < 1e-6, "residual {residual}");
    }
}
