//! Alternating projections (Gerchberg-Saxton / error reduction) and Wirtinger
//! Flow with spectral initialization.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    power_iteration, sample_gaussian, CVector, HermitianMatrix, LeastSquares, RngStream, C64,
};
use crate::problems::{PhaseRetrievalInstance, SolveReport};

/// Iteration cap for alternating projections.
pub const AP_MAX_ITER: usize = 3000;
/// Relative iterate change below which alternating projections stop.
pub const AP_TOL: f64 = 1e-10;

/// Projection onto `{y : |y_k| = b_k}`; zero entries take phase 1.
pub fn project_modulus(y: &CVector, b: &DVector<f64>) -> CVector {
    assert_eq!(y.len(), b.len(), "project_modulus needs equal lengths");
    CVector::from_iterator(
        y.len(),
        y.iter().zip(b.iter()).map(|(&z, &bk)| {
            let r = z.norm();
            if r > 0.0 {
                z * (bk / r)
            } else {
                C64::from(bk)
            }
        }),
    )
}

fn modulus_residual(y: &CVector, b: &DVector<f64>) -> f64 {
    y.iter()
        .zip(b.iter())
        .map(|(z, bk)| (z.norm() - bk).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Alternating projections with the QR factorization of `B` computed once.
///
/// Iterates live in `Range(B)` and are stored by their coordinates in the
/// orthonormal basis `Q`, so one step costs two `m x n` products.
#[derive(Debug, Clone)]
pub struct AlternatingProjections {
    ls: LeastSquares,
    moduli: DVector<f64>,
}

impl AlternatingProjections {
    pub fn new(instance: &PhaseRetrievalInstance) -> Result<Self> {
        Ok(Self {
            ls: LeastSquares::new(instance.matrix())?,
            moduli: instance.moduli.clone(),
        })
    }

    /// `y_t = P_Range(P_E(y_{t-1}))` from `y0` until the relative change of
    /// `y_t` drops below `tol` or `max_iter` steps were taken.
    pub fn run_from(&self, y0: &CVector, max_iter: usize, tol: f64) -> Result<ApRun> {
        if y0.len() != self.moduli.len() {
            return Err(Error::InvalidDimension(format!(
                "start has length {}, expected {}",
                y0.len(),
                self.moduli.len()
            )));
        }
        let mut coeffs = self.ls.coefficients(&project_modulus(y0, &self.moduli));
        let mut y = self.ls.q() * &coeffs;
        let mut change = (&y - y0).norm() / y.norm().max(f64::MIN_POSITIVE);
        let mut residual_trace = vec![modulus_residual(&y, &self.moduli)];
        let mut iterations = 1;
        let mut converged = change < tol;
        while !converged && iterations < max_iter {
            let next = self.ls.coefficients(&project_modulus(&y, &self.moduli));
            change = (&next - &coeffs).norm() / next.norm().max(f64::MIN_POSITIVE);
            coeffs = next;
            y = self.ls.q() * &coeffs;
            residual_trace.push(modulus_residual(&y, &self.moduli));
            iterations += 1;
            converged = change < tol;
        }
        Ok(ApRun {
            estimate: self.ls.solve_coefficients(&coeffs),
            iterations,
            converged,
            residual_trace,
        })
    }

    /// One iteration mapped to signal space: `x -> B^+ P_E(Bx)`.
    pub fn signal_step(&self, x: &CVector, matrix: &crate::numerics::CMatrix) -> CVector {
        self.ls.solve(&project_modulus(&(matrix * x), &self.moduli))
    }
}

#[derive(Debug, Clone)]
pub struct ApRun {
    pub estimate: CVector,
    pub iterations: usize,
    pub converged: bool,
    pub residual_trace: Vec<f64>,
}

impl ApRun {
    fn into_report(self, instance: &PhaseRetrievalInstance) -> SolveReport {
        SolveReport {
            rel_error_mod_phase: instance.relative_error(&self.estimate),
            estimate: self.estimate,
            iterations: self.iterations,
            converged: self.converged,
            residual_trace: self.residual_trace,
            objective_trace: Vec::new(),
        }
    }
}

/// Alternating projections from a Gaussian start `y_0` in the instance's field.
pub fn alternating_projections(
    instance: &PhaseRetrievalInstance,
    rng: &mut RngStream,
    max_iter: usize,
    tol: f64,
) -> Result<SolveReport> {
    let y0 = sample_gaussian(rng, instance.m(), instance.field);
    alternating_projections_from(instance, &y0, max_iter, tol)
}

pub fn alternating_projections_from(
    instance: &PhaseRetrievalInstance,
    y0: &CVector,
    max_iter: usize,
    tol: f64,
) -> Result<SolveReport> {
    let solver = AlternatingProjections::new(instance)?;
    Ok(solver.run_from(y0, max_iter, tol)?.into_report(instance))
}

/// Wirtinger Flow settings. The step is `step_scale / lambda^2` with
/// `lambda^2 = (1/m) sum b_k^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WfConfig {
    pub step_scale: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub backtracking: bool,
}

impl Default for WfConfig {
    fn default() -> Self {
        Self {
            step_scale: 0.1,
            max_iter: 5000,
            grad_tol: 1e-9,
            backtracking: true,
        }
    }
}

impl WfConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0) || !(self.grad_tol > 0.0) {
            return Err(Error::Config(
                "Wirtinger Flow needs step_scale > 0 and grad_tol > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Quartic loss and its (Wirtinger) gradient, sharing the product `Bx`.
fn loss_and_grad(instance: &PhaseRetrievalInstance, x: &CVector) -> (f64, CVector) {
    let m = instance.m() as f64;
    let y = instance.ensemble.measure(x);
    let mut loss = 0.0;
    let weighted = CVector::from_iterator(
        y.len(),
        y.iter().zip(instance.moduli.iter()).map(|(&yk, &bk)| {
            let r = yk.norm_sqr() - bk * bk;
            loss += r * r;
            yk * r
        }),
    );
    let grad = instance.matrix().ad_mul(&weighted) / C64::from(m);
    (loss / (2.0 * m), grad)
}

/// `f(x) = (1/2m) sum_k (|<x, v_k>|^2 - b_k^2)^2`.
pub fn wf_loss(instance: &PhaseRetrievalInstance, x: &CVector) -> f64 {
    let m = instance.m() as f64;
    let y = instance.ensemble.measure(x);
    y.iter()
        .zip(instance.moduli.iter())
        .map(|(yk, bk)| (yk.norm_sqr() - bk * bk).powi(2))
        .sum::<f64>()
        / (2.0 * m)
}

/// `grad f(x) = (1/m) sum_k (|<x, v_k>|^2 - b_k^2) v_k v_k* x`.
///
/// Normalized so that `d/de f(x + e h) = 2 Re <grad f(x), h>`.
pub fn wf_grad(instance: &PhaseRetrievalInstance, x: &CVector) -> CVector {
    loss_and_grad(instance, x).1
}

/// `sqrt((1/m) sum b_k^2)`, the norm estimate used for scaling.
pub fn signal_norm_estimate(instance: &PhaseRetrievalInstance) -> f64 {
    (instance.moduli.norm_squared() / instance.m() as f64).sqrt()
}

/// Leading eigenvector of `M = (1/m) sum b_k^2 v_k v_k*`, scaled to the norm estimate.
pub fn wf_spectral_init(instance: &PhaseRetrievalInstance) -> Result<CVector> {
    let m = instance.m();
    if m == 0 {
        return Err(Error::InvalidDimension("no measurements".into()));
    }
    let b = instance.matrix();
    let mut weighted = b.clone();
    for (k, bk) in instance.moduli.iter().enumerate() {
        weighted.row_mut(k).scale_mut(bk * bk / m as f64);
    }
    let spectral = HermitianMatrix::from_upper(b.ad_mul(&weighted));
    // Start from the heaviest column of M.
    let n = spectral.dim();
    let heaviest = (0..n)
        .max_by(|&i, &j| spectral.matrix()[(i, i)].re.total_cmp(&spectral.matrix()[(j, j)].re))
        .unwrap_or(0);
    let mut start = spectral.matrix().column(heaviest).into_owned();
    if start.norm() == 0.0 {
        start = CVector::from_element(n, C64::from(1.0));
    }
    let (_, v) = power_iteration(&spectral, &start, 1e-10, 100_000)?;
    Ok(v * C64::from(signal_norm_estimate(instance)))
}

/// Spectral initialization followed by gradient descent on the quartic loss.
pub fn wirtinger_flow(instance: &PhaseRetrievalInstance, config: &WfConfig) -> Result<SolveReport> {
    config.validate()?;
    let x0 = wf_spectral_init(instance)?;
    wirtinger_flow_from(instance, &x0, config)
}

/// Gradient descent from `x0` with step `mu = step_scale / lambda^2`.
///
/// With backtracking on, a step that increases the loss is retried with `mu`
/// halved, and the halved step is kept for the rest of the run. Stops when
/// `||grad f|| < grad_tol * lambda^3` or after `max_iter` steps.
pub fn wirtinger_flow_from(
    instance: &PhaseRetrievalInstance,
    x0: &CVector,
    config: &WfConfig,
) -> Result<SolveReport> {
    config.validate()?;
    if x0.len() != instance.n() {
        return Err(Error::InvalidDimension(format!(
            "start has length {}, expected {}",
            x0.len(),
            instance.n()
        )));
    }
    let lambda = signal_norm_estimate(instance);
    let threshold = config.grad_tol * lambda.powi(3);
    let mut mu = if lambda > 0.0 {
        config.step_scale / (lambda * lambda)
    } else {
        config.step_scale
    };
    let min_mu = mu * 1e-30;

    let mut x = x0.clone();
    let (mut loss, mut grad) = loss_and_grad(instance, &x);
    let mut objective_trace = vec![loss];
    let mut residual_trace = vec![grad.norm()];
    let mut iterations = 0;
    let mut converged = grad.norm() <= threshold;

    while !converged && iterations < config.max_iter {
        let mut candidate = &x - &grad * C64::from(mu);
        let (mut cand_loss, mut cand_grad) = loss_and_grad(instance, &candidate);
        if config.backtracking {
            while !(cand_loss <= loss) && mu > min_mu {
                mu *= 0.5;
                candidate = &x - &grad * C64::from(mu);
                (cand_loss, cand_grad) = loss_and_grad(instance, &candidate);
            }
            if !(cand_loss <= loss) {
                break;
            }
        }
        if !cand_loss.is_finite() {
            break;
        }
        x = candidate;
        loss = cand_loss;
        grad = cand_grad;
        iterations += 1;
        objective_trace.push(loss);
        residual_trace.push(grad.norm());
        converged = grad.norm() <= threshold;
    }

    Ok(SolveReport {
        rel_error_mod_phase: instance.relative_error(&x),
        estimate: x,
        iterations,
        converged,
        residual_trace,
        objective_trace,
    })
}
