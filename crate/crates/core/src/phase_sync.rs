//! Generalized power method for phase synchronization, its fixed-point
//! residual, and leave-one-out diagnostic sequences.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{inner, power_iteration, top_eigenpair, CVector, HermitianMatrix, C64};
use crate::problems::{dist_mod_phase, SolveReport, SyncInstance};

/// A vector with unit-modulus entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint(CVector);

impl TorusPoint {
    /// Accepts `z` if every entry has modulus 1 within `1e-12`.
    pub fn new(z: CVector) -> Result<Self> {
        if z.iter().any(|v| (v.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Config("entries must have unit modulus".into()));
        }
        Ok(Self(z))
    }

    pub fn as_vector(&self) -> &CVector {
        &self.0
    }

    pub fn into_vector(self) -> CVector {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Entrywise `z_k / |z_k|`, with `0/0 = 1`.
pub fn torus_project(z: &CVector) -> TorusPoint {
    TorusPoint(z.map(|v| {
        let r = v.norm();
        if r > 0.0 {
            v / r
        } else {
            C64::from(1.0)
        }
    }))
}

/// `||P(Cz) - z||`.
pub fn fixed_point_residual(c: &HermitianMatrix, z: &TorusPoint) -> f64 {
    (torus_project(&c.apply(z.as_vector())).0 - z.as_vector()).norm()
}

/// `z* C z`.
pub fn mle_objective(c: &HermitianMatrix, z: &TorusPoint) -> f64 {
    let value = inner(z.as_vector(), &c.apply(z.as_vector()));
    debug_assert!(
        value.im.abs() <= 1e-10 * (1.0 + value.re.abs()),
        "quadratic form of a Hermitian matrix has imaginary part {}",
        value.im
    );
    value.re
}

#[derive(Debug, Clone)]
pub struct GpmRun {
    pub report: SolveReport,
    /// `z^(1), ..., z^(T)`; the spectral start `z^(0)` is not a torus point.
    pub history: Vec<TorusPoint>,
    /// The unit-norm leading eigenvector used as `z^(0)`.
    pub start: CVector,
}

/// `z^(t+1) = P(C z^(t))` from the leading eigenvector of `C`.
///
/// Stops once the fixed-point residual falls below `tol` or after `max_iter`
/// updates. `residual_trace` holds the residual of each iterate and
/// `objective_trace` its `z* C z`.
pub fn gpm(instance: &SyncInstance, max_iter: usize, tol: f64) -> Result<GpmRun> {
    if instance.n() < 2 {
        return Err(Error::InvalidDimension("synchronization needs n >= 2".into()));
    }
    let c = &instance.observations;
    let (_, start) = top_eigenpair(c)?;
    let mut history = Vec::new();
    let mut residual_trace = Vec::new();
    let mut objective_trace = Vec::new();
    let mut current = start.clone();
    let mut converged = false;
    for _ in 0..max_iter {
        let z = torus_project(&c.apply(&current));
        let residual = fixed_point_residual(c, &z);
        residual_trace.push(residual);
        objective_trace.push(mle_objective(c, &z));
        current = z.as_vector().clone();
        history.push(z);
        if residual < tol {
            converged = true;
            break;
        }
    }
    let estimate = history
        .last()
        .map(|z| z.as_vector().clone())
        .unwrap_or_else(|| torus_project(&start).into_vector());
    let report = SolveReport {
        rel_error_mod_phase: Some(instance.relative_error(&estimate)),
        estimate,
        iterations: history.len(),
        converged,
        residual_trace,
        objective_trace,
    };
    Ok(GpmRun {
        report,
        history,
        start,
    })
}

/// Per-iteration leave-one-out quantities, one entry per GPM update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooDiagnostics {
    /// `max_k dist(z^(t), z^(k,t))`.
    pub max_dist_aux: Vec<f64>,
    /// `max_k |<W_:,k, z^(t)>|`.
    pub max_corr_main: Vec<f64>,
    /// `max_k |<W_:,k, z^(k,t)>|`.
    pub max_corr_aux: Vec<f64>,
}

impl LooDiagnostics {
    pub fn len(&self) -> usize {
        self.max_dist_aux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.max_dist_aux.is_empty()
    }
}

/// `C^(k) v` where `C^(k)` is `C` with the noise in row and column `k` removed.
fn apply_leave_one_out(instance: &SyncInstance, k: usize, v: &CVector) -> CVector {
    let w = instance.noise.matrix();
    let mut out = instance.observations.apply(v);
    let vk = v[k];
    for j in 0..v.len() {
        out[j] -= w[(j, k)] * vk;
    }
    let row: C64 = (0..v.len()).map(|j| w[(k, j)] * v[j]).sum();
    out[k] -= row;
    out
}

/// Dense `C^(k)`.
pub fn leave_one_out_matrix(instance: &SyncInstance, k: usize) -> HermitianMatrix {
    let mut w = instance.noise.matrix().clone();
    w.row_mut(k).fill(C64::from(0.0));
    w.column_mut(k).fill(C64::from(0.0));
    HermitianMatrix::outer(&instance.signal).add(&HermitianMatrix::from_upper(w))
}

/// Runs the main GPM sequence and the `n` leave-one-out sequences for
/// exactly `max_iter` updates, recording the diagnostics after each update.
///
/// Auxiliary sequence `k` starts from the leading eigenvector of its own
/// `C^(k)`, obtained by power iteration warm-started at the main eigenvector.
pub fn loo_run(instance: &SyncInstance, max_iter: usize) -> Result<LooDiagnostics> {
    let n = instance.n();
    if n < 2 {
        return Err(Error::InvalidDimension("synchronization needs n >= 2".into()));
    }
    let c = &instance.observations;
    let (_, main_start) = top_eigenpair(c)?;
    let mut main = main_start.clone();
    let mut aux: Vec<CVector> = (0..n)
        .map(|k| {
            let ck = leave_one_out_matrix(instance, k);
            power_iteration(&ck, &main_start, 1e-13, 100_000).map(|(_, v)| v)
        })
        .collect::<Result<_>>()?;

    let w = instance.noise.matrix();
    let column_corr = |k: usize, v: &CVector| -> f64 {
        (0..n).map(|j| w[(j, k)].conj() * v[j]).sum::<C64>().norm()
    };

    let mut diag = LooDiagnostics {
        max_dist_aux: Vec::with_capacity(max_iter),
        max_corr_main: Vec::with_capacity(max_iter),
        max_corr_aux: Vec::with_capacity(max_iter),
    };
    for _ in 0..max_iter {
        main = torus_project(&c.apply(&main)).into_vector();
        for (k, v) in aux.iter_mut().enumerate() {
            *v = torus_project(&apply_leave_one_out(instance, k, v)).into_vector();
        }
        let mut dist = 0.0f64;
        let mut corr_main = 0.0f64;
        let mut corr_aux = 0.0f64;
        for (k, v) in aux.iter().enumerate() {
            dist = dist.max(dist_mod_phase(&main, v));
            corr_main = corr_main.max(column_corr(k, &main));
            corr_aux = corr_aux.max(column_corr(k, v));
        }
        diag.max_dist_aux.push(dist);
        diag.max_corr_main.push(corr_main);
        diag.max_corr_aux.push(corr_aux);
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_gaussian, Field, RngStream};
    use crate::problems::gen_sync;

    #[test]
    fn projection_conventions() {
        let z = CVector::from_vec(vec![C64::from_polar(1.0, 0.3), C64::new(0.0, 0.0)]);
        let p = torus_project(&z);
        assert!((p.as_vector()[0] - z[0]).norm() < 1e-15);
        assert_eq!(p.as_vector()[1], C64::from(1.0));
        let w = sample_gaussian(&mut RngStream::new(1), 5, Field::Complex);
        let scaled = torus_project(&(&w * C64::from(3.5)));
        assert!((scaled.as_vector() - torus_project(&w).as_vector()).norm() < 1e-15);
    }

    #[test]
    fn noiseless_recovery_in_one_step() {
        let inst = gen_sync(30, 0.0, &mut RngStream::new(2)).unwrap();
        let run = gpm(&inst, 100, 1e-12).unwrap();
        assert_eq!(run.report.iterations, 1);
        assert!(run.report.converged);
        assert!(run.report.rel_error_mod_phase.unwrap() < 1e-10);
        let truth = TorusPoint::new(inst.signal.clone()).unwrap();
        assert!(fixed_point_residual(&inst.observations, &truth) < 1e-12);
        let n2 = 30.0f64 * 30.0;
        assert!((mle_objective(&inst.observations, &truth) - n2).abs() < 1e-9 * n2);
    }

    #[test]
    fn converged_iterate_is_a_fixed_point() {
        let n = 60;
        let sigma = 0.2 * (n as f64 / (n as f64).ln()).sqrt();
        let inst = gen_sync(n, sigma, &mut RngStream::new(3)).unwrap();
        let run = gpm(&inst, 1000, 1e-10).unwrap();
        assert!(run.report.converged);
        let last = run.history.last().unwrap();
        assert!(fixed_point_residual(&inst.observations, last) <= 1e-10);
        for w in run.report.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs());
        }
    }

    #[test]
    fn random_point_is_not_fixed() {
        let inst = gen_sync(20, 1.0, &mut RngStream::new(4)).unwrap();
        let z = torus_project(&sample_gaussian(&mut RngStream::new(5), 20, Field::Complex));
        assert!(fixed_point_residual(&inst.observations, &z) > 0.0);
    }

    #[test]
    fn huge_noise_degrades_gracefully() {
        let n = 40;
        let inst = gen_sync(n, 10.0 * n as f64, &mut RngStream::new(6)).unwrap();
        let run = gpm(&inst, 50, 1e-12).unwrap();
        assert_eq!(run.report.iterations, run.report.residual_trace.len());
    }

    #[test]
    fn objective_invariant_under_global_phase() {
        let inst = gen_sync(10, 0.8, &mut RngStream::new(7)).unwrap();
        let z = torus_project(&sample_gaussian(&mut RngStream::new(8), 10, Field::Complex));
        let rotated = TorusPoint::new(z.as_vector() * C64::from_polar(1.0, 1.9)).unwrap();
        let a = mle_objective(&inst.observations, &z);
        let b = mle_objective(&inst.observations, &rotated);
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn equivariance_under_signal_rotation() {
        let inst = gen_sync(25, 1.0, &mut RngStream::new(9)).unwrap();
        let g = C64::from_polar(1.0, 0.6);
        let rotated =
            SyncInstance::from_parts(&inst.signal * g, inst.sigma, inst.noise.clone()).unwrap();
        let a = gpm(&inst, 20, 0.0).unwrap();
        let b = gpm(&rotated, 20, 0.0).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (za, zb) in a.history.iter().zip(&b.history) {
            assert!(dist_mod_phase(za.as_vector(), zb.as_vector()) < 1e-8);
        }
        let ea = a.report.rel_error_mod_phase.unwrap();
        let eb = b.report.rel_error_mod_phase.unwrap();
        assert!((ea - eb).abs() < 1e-8);
    }

    #[test]
    fn leave_one_out_operator_matches_dense_matrix() {
        let inst = gen_sync(9, 0.9, &mut RngStream::new(10)).unwrap();
        let v = sample_gaussian(&mut RngStream::new(11), 9, Field::Complex);
        for k in [0, 4, 8] {
            let dense = leave_one_out_matrix(&inst, k).apply(&v);
            assert!((apply_leave_one_out(&inst, k, &v) - dense).norm() < 1e-12);
        }
    }

    #[test]
    fn noiseless_diagnostics_vanish() {
        let inst = gen_sync(15, 0.0, &mut RngStream::new(12)).unwrap();
        let diag = loo_run(&inst, 5).unwrap();
        assert_eq!(diag.len(), 5);
        assert!(diag.max_dist_aux.iter().all(|&d| d < 1e-10));
        assert!(diag.max_corr_main.iter().all(|&d| d == 0.0));
        assert!(diag.max_corr_aux.iter().all(|&d| d == 0.0));
    }
}
