//! Problem instances (phase retrieval, phase synchronization), the
//! phase-invariant distance, and the common solver report.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    inner, sample_gaussian, CMatrix, CVector, Field, HermitianMatrix, RngStream, C64, ZERO,
};

/// Default success threshold on the relative error modulo global phase.
pub const DEFAULT_TAU: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleKind {
    ComplexGaussian,
    RealGaussian,
    StructuredFrame,
}

impl EnsembleKind {
    pub fn field(self) -> Field {
        match self {
            EnsembleKind::RealGaussian => Field::Real,
            EnsembleKind::ComplexGaussian | EnsembleKind::StructuredFrame => Field::Complex,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::ComplexGaussian => "complex-gaussian",
            EnsembleKind::RealGaussian => "real-gaussian",
            EnsembleKind::StructuredFrame => "structured-frame",
        }
    }
}

impl fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex-gaussian" | "gaussian" => Ok(EnsembleKind::ComplexGaussian),
            "real-gaussian" => Ok(EnsembleKind::RealGaussian),
            "structured-frame" | "structured" => Ok(EnsembleKind::StructuredFrame),
            other => Err(Error::Config(format!("unknown ensemble '{other}'"))),
        }
    }
}

/// Measurement operator `B` whose k-th row is `v_k*`, so `(Bx)_k = <x, v_k>`
/// up to conjugation (only moduli matter).
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    pub kind: EnsembleKind,
    pub matrix: CMatrix,
}

impl MeasurementEnsemble {
    pub fn sample(kind: EnsembleKind, n: usize, m: usize, rng: &mut RngStream) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("signal dimension must be >= 1".into()));
        }
        match kind {
            EnsembleKind::StructuredFrame => Self::structured_frame(n, m),
            _ => {
                let field = kind.field();
                let mut matrix = CMatrix::zeros(m, n);
                for k in 0..m {
                    let row = sample_gaussian(rng, n, field);
                    for j in 0..n {
                        matrix[(k, j)] = row[j];
                    }
                }
                Ok(Self { kind, matrix })
            }
        }
    }

    /// Multi-scale Haar frame, cycled with diagonal phase modulation.
    ///
    /// Repeat 0 is the orthonormal Haar basis of `C^n`: the constant vector
    /// `1/sqrt(n)` followed by, for each scale `j = 0..log2(n)` and shift
    /// `s < 2^j`, the vector supported on the dyadic block of length
    /// `L = n / 2^j` starting at `s L`, equal to `+1/sqrt(L)` on its first half
    /// and `-1/sqrt(L)` on its second half. Repeat `r` multiplies coordinate
    /// `k` of every repeat-0 row by `exp(2 pi i k r / n)`. Rows are emitted
    /// repeat by repeat until `m` rows exist; all rows have unit norm.
    pub fn structured_frame(n: usize, m: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidDimension(format!(
                "structured frame needs n a power of two, got {n}"
            )));
        }
        let mut haar: Vec<Vec<f64>> = Vec::with_capacity(n);
        haar.push(vec![1.0 / (n as f64).sqrt(); n]);
        let mut blocks = 1;
        while blocks < n {
            let len = n / blocks;
            let amp = 1.0 / (len as f64).sqrt();
            for s in 0..blocks {
                let mut row = vec![0.0; n];
                for (offset, value) in row[s * len..(s + 1) * len].iter_mut().enumerate() {
                    *value = if offset < len / 2 { amp } else { -amp };
                }
                haar.push(row);
            }
            blocks *= 2;
        }
        let mut matrix = CMatrix::zeros(m, n);
        for row in 0..m {
            let repeat = row / n;
            let base = &haar[row % n];
            for k in 0..n {
                let angle = 2.0 * std::f64::consts::PI * ((k * repeat) % n) as f64 / n as f64;
                matrix[(row, k)] = C64::from_polar(base[k], angle);
            }
        }
        Ok(Self {
            kind: EnsembleKind::StructuredFrame,
            matrix,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn m(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn field(&self) -> Field {
        self.kind.field()
    }

    /// `Bx`.
    pub fn measure(&self, x: &CVector) -> CVector {
        &self.matrix * x
    }

    /// Entrywise moduli `|Bx|`.
    pub fn moduli(&self, x: &CVector) -> DVector<f64> {
        self.measure(x).map(|z| z.norm())
    }
}

/// Phaseless measurements `b_k = |<x, v_k>|`, optionally with the signal that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRetrievalInstance {
    pub ensemble: MeasurementEnsemble,
    pub moduli: DVector<f64>,
    pub signal: Option<CVector>,
    pub field: Field,
}

impl PhaseRetrievalInstance {
    /// Instance with exact moduli of `signal`.
    pub fn from_signal(ensemble: MeasurementEnsemble, signal: CVector) -> Result<Self> {
        if signal.len() != ensemble.n() {
            return Err(Error::InvalidDimension(format!(
                "signal has length {}, ensemble expects {}",
                signal.len(),
                ensemble.n()
            )));
        }
        let moduli = ensemble.moduli(&signal);
        let field = ensemble.field();
        Ok(Self {
            ensemble,
            moduli,
            signal: Some(signal),
            field,
        })
    }

    /// Instance from raw moduli without ground truth.
    pub fn from_moduli(ensemble: MeasurementEnsemble, moduli: DVector<f64>) -> Result<Self> {
        if moduli.len() != ensemble.m() {
            return Err(Error::InvalidDimension(format!(
                "{} moduli for {} measurements",
                moduli.len(),
                ensemble.m()
            )));
        }
        if moduli.iter().any(|&b| !(b >= 0.0)) {
            return Err(Error::Config("moduli must be nonnegative".into()));
        }
        let field = ensemble.field();
        Ok(Self {
            ensemble,
            moduli,
            signal: None,
            field,
        })
    }

    pub fn n(&self) -> usize {
        self.ensemble.n()
    }

    pub fn m(&self) -> usize {
        self.ensemble.m()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.ensemble.matrix
    }

    /// Same measurement vectors with the signal rescaled to unit norm.
    pub fn with_unit_signal(&self) -> Result<Self> {
        let signal = self.signal.as_ref().ok_or(Error::MissingGroundTruth)?;
        let norm = signal.norm();
        if !(norm > 0.0) {
            return Err(Error::NumericFailure("signal is zero".into()));
        }
        Self::from_signal(self.ensemble.clone(), signal / C64::from(norm))
    }

    /// `dist(estimate, signal) / ||signal||` modulo the field's global ambiguity.
    pub fn relative_error(&self, estimate: &CVector) -> Option<f64> {
        self.signal
            .as_ref()
            .map(|x| dist_mod_phase_in(estimate, x, self.field) / x.norm())
    }
}

pub fn gen_phase_retrieval(
    n: usize,
    m: usize,
    kind: EnsembleKind,
    rng: &mut RngStream,
) -> Result<PhaseRetrievalInstance> {
    if m == 0 {
        return Err(Error::InvalidDimension("need at least one measurement".into()));
    }
    let ensemble = MeasurementEnsemble::sample(kind, n, m, rng)?;
    let signal = sample_gaussian(rng, n, kind.field());
    PhaseRetrievalInstance::from_signal(ensemble, signal)
}

/// Noisy relative-phase observations `C = z z* + W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncInstance {
    pub observations: HermitianMatrix,
    pub signal: CVector,
    pub sigma: f64,
    pub noise: HermitianMatrix,
}

impl SyncInstance {
    /// Assembles `C = z z* + W` from a unit-modulus `signal` and a zero-diagonal `noise`.
    pub fn from_parts(signal: CVector, sigma: f64, noise: HermitianMatrix) -> Result<Self> {
        let n = signal.len();
        if noise.dim() != n {
            return Err(Error::InvalidDimension(format!(
                "noise is {}x{}, signal has length {n}",
                noise.dim(),
                noise.dim()
            )));
        }
        if (0..n).any(|k| noise.matrix()[(k, k)].norm() != 0.0) {
            return Err(Error::Config("noise matrix must have a zero diagonal".into()));
        }
        if signal.iter().any(|z| (z.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Config("signal must have unit-modulus entries".into()));
        }
        let observations = HermitianMatrix::outer(&signal).add(&noise);
        Ok(Self {
            observations,
            signal,
            sigma,
            noise,
        })
    }

    pub fn n(&self) -> usize {
        self.signal.len()
    }

    /// `dist(estimate, signal) / sqrt(n)`.
    pub fn relative_error(&self, estimate: &CVector) -> f64 {
        dist_mod_phase(estimate, &self.signal) / self.signal.norm()
    }
}

pub fn gen_sync(n: usize, sigma: f64, rng: &mut RngStream) -> Result<SyncInstance> {
    if n < 2 {
        return Err(Error::InvalidDimension(format!("synchronization needs n >= 2, got {n}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let signal = CVector::from_fn(n, |_, _| C64::from_polar(1.0, two_pi * rng.uniform()));
    let scale = sigma * std::f64::consts::FRAC_1_SQRT_2;
    let mut w = CMatrix::from_element(n, n, ZERO);
    for k in 0..n {
        for l in (k + 1)..n {
            let re = rng.standard_normal();
            let im = rng.standard_normal();
            w[(k, l)] = C64::new(scale * re, scale * im);
        }
    }
    SyncInstance::from_parts(signal, sigma, HermitianMatrix::from_upper(w))
}

/// `min_alpha ||u - e^{i alpha} v||`.
///
/// Evaluated at the optimal phase `alpha = arg <v, u>` rather than through
/// `sqrt(||u||^2 + ||v||^2 - 2|<u,v>|)`, which loses half the digits when
/// the two vectors nearly coincide; both expressions are equal.
pub fn dist_mod_phase(u: &CVector, v: &CVector) -> f64 {
    assert_eq!(u.len(), v.len(), "dist_mod_phase needs equal lengths");
    let c = inner(v, u);
    let phase = if c.norm() > 0.0 { c / c.norm() } else { C64::from(1.0) };
    (u - v * phase).norm()
}

/// Distance modulo the field's ambiguity: a global phase for complex
/// problems, a global sign for real ones.
pub fn dist_mod_phase_in(u: &CVector, v: &CVector, field: Field) -> f64 {
    match field {
        Field::Complex => dist_mod_phase(u, v),
        Field::Real => {
            assert_eq!(u.len(), v.len(), "dist_mod_phase needs equal lengths");
            (u - v).norm().min((u + v).norm())
        }
    }
}

/// Outcome of a single solver run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    #[serde(serialize_with = "crate::io::serialize_cvector")]
    pub estimate: CVector,
    pub rel_error_mod_phase: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
}

/// `rel_error_mod_phase < tau`.
pub fn success(report: &SolveReport, tau: f64) -> Result<bool> {
    report
        .rel_error_mod_phase
        .map(|e| e < tau)
        .ok_or(Error::MissingGroundTruth)
}
