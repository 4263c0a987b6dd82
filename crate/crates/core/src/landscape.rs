//! Expected quartic landscape, empirical curvature probes, the one-step
//! displacement probe and attraction-basin maps of alternating projections.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{inner, sample_unit_sphere, CVector, Field, RngStream, C64};
use crate::phase_retrieval::{
    signal_norm_estimate, wf_loss, AlternatingProjections, WfConfig,
};
use crate::problems::{dist_mod_phase, dist_mod_phase_in, PhaseRetrievalInstance};

/// `E f(x) = ||x||^4 - ||x||^2 ||s||^2 - |<x, s>|^2 + ||s||^4` for complex
/// Gaussian measurement vectors.
pub fn expected_loss(x: &CVector, x_s: &CVector) -> f64 {
    assert_eq!(x.len(), x_s.len(), "expected_loss needs equal dimensions");
    let xx = x.norm_squared();
    let ss = x_s.norm_squared();
    xx * xx - xx * ss - inner(x, x_s).norm_sqr() + ss * ss
}

/// `2((2||x||^2 - ||s||^2) x - <s, x> s)`.
///
/// This is the real gradient, `d/de E f(x + e h) = Re <grad, h>`; it is twice
/// the expectation of `wf_grad`, which follows the Wirtinger convention.
pub fn expected_grad(x: &CVector, x_s: &CVector) -> CVector {
    assert_eq!(x.len(), x_s.len(), "expected_grad needs equal dimensions");
    let a = 2.0 * x.norm_squared() - x_s.norm_squared();
    (x * C64::from(a) - x_s * inner(x_s, x)) * C64::from(2.0)
}

/// `2((2||x||^2 - ||s||^2) ||h||^2 + 4 Re^2 <x, h> - |<s, h>|^2)`, the second
/// derivative of `E f` along `x + e h`.
pub fn expected_hess_form(x: &CVector, x_s: &CVector, h: &CVector) -> f64 {
    assert!(x.len() == x_s.len() && x.len() == h.len(), "expected_hess_form needs equal dimensions");
    let a = 2.0 * x.norm_squared() - x_s.norm_squared();
    let re = inner(x, h).re;
    2.0 * (a * h.norm_squared() + 4.0 * re * re - inner(x_s, h).norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CriticalTag {
    Solution,
    Zero,
    Ring,
    None,
}

impl fmt::Display for CriticalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CriticalTag::Solution => "E1-solution",
            CriticalTag::Zero => "E2-zero",
            CriticalTag::Ring => "E3-ring",
            CriticalTag::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalClass {
    pub tag: CriticalTag,
    pub tolerance: f64,
}

/// Critical set of `E f` containing `x`, tested as solution, zero, ring.
pub fn classify_critical(x: &CVector, x_s: &CVector, tol: f64) -> Result<CriticalClass> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let s = x_s.norm();
    let tag = if dist_mod_phase(x, x_s) <= tol * s {
        CriticalTag::Solution
    } else if x.norm() <= tol * s {
        CriticalTag::Zero
    } else if inner(x_s, x).norm() <= tol * s * s
        && (x.norm() - s / std::f64::consts::SQRT_2).abs() <= tol * s
    {
        CriticalTag::Ring
    } else {
        CriticalTag::None
    };
    Ok(CriticalClass { tag, tolerance: tol })
}

/// Second directional derivative of `wf_loss` at `x` along the true signal.
///
/// Central differences at steps `h` and `h/2` (with `h = 1e-3 ||x_s||`) must
/// agree to `tol_fd` relative; the finer value is returned.
pub fn z1_hess_probe(instance: &PhaseRetrievalInstance, x: &CVector, tol_fd: f64) -> Result<f64> {
    let x_s = instance.signal.as_ref().ok_or(Error::MissingGroundTruth)?;
    if x.len() != x_s.len() {
        return Err(Error::InvalidDimension(format!(
            "point has length {}, expected {}",
            x.len(),
            x_s.len()
        )));
    }
    let f0 = wf_loss(instance, x);
    let second = |h: f64| {
        let step = x_s * C64::from(h);
        (wf_loss(instance, &(x + &step)) - 2.0 * f0 + wf_loss(instance, &(x - &step))) / (h * h)
    };
    let h = 1e-3 * x_s.norm().max(f64::MIN_POSITIVE);
    let coarse = second(h);
    let fine = second(h / 2.0);
    let scale = coarse.abs().max(fine.abs()).max(1e-12 * x_s.norm_squared().powi(2));
    if (coarse - fine).abs() > tol_fd * scale {
        return Err(Error::FdInconsistent {
            first: coarse,
            second: fine,
        });
    }
    Ok(fine)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "WF")]
    Wf,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ap => "AP",
            Algorithm::Wf => "WF",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ap" => Ok(Algorithm::Ap),
            "wf" => Ok(Algorithm::Wf),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// One-step maps of AP and WF on a real instance, in real arithmetic.
#[derive(Debug, Clone)]
pub struct DisplacementProbe {
    algorithm: Algorithm,
    matrix: DMatrix<f64>,
    moduli: DVector<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    mu: f64,
}

impl DisplacementProbe {
    pub fn new(algorithm: Algorithm, instance: &PhaseRetrievalInstance) -> Result<Self> {
        if instance.field != Field::Real {
            return Err(Error::Config("the displacement probe needs a real-field instance".into()));
        }
        let matrix = instance.matrix().map(|z| z.re);
        let (q, r) = match algorithm {
            Algorithm::Ap => {
                let qr = matrix.clone().qr();
                let r = qr.r();
                let diag_max = r.diagonal().amax();
                if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max) {
                    return Err(Error::RankDeficient {
                        ratio: r.diagonal().amin() / diag_max,
                    });
                }
                (qr.q(), r)
            }
            Algorithm::Wf => (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)),
        };
        let lambda = signal_norm_estimate(instance);
        Ok(Self {
            algorithm,
            matrix,
            moduli: instance.moduli.clone(),
            q,
            r,
            mu: WfConfig::default().step_scale / (lambda * lambda),
        })
    }

    pub fn step(&self, z: &DVector<f64>) -> DVector<f64> {
        let y = &self.matrix * z;
        match self.algorithm {
            Algorithm::Ap => {
                let target = y.zip_map(&self.moduli, |yk, bk| if yk < 0.0 { -bk } else { bk });
                let c = self.q.tr_mul(&target);
                self.r
                    .solve_upper_triangular(&c)
                    .expect("R has a nonzero diagonal")
            }
            Algorithm::Wf => {
                let m = self.moduli.len() as f64;
                let w = y.zip_map(&self.moduli, |yk, bk| (yk * yk - bk * bk) * yk);
                let grad = self.matrix.tr_mul(&w) / m;
                z - grad * self.mu
            }
        }
    }

    /// Mean of `||T(z) - T(z')||` over random pairs on the unit sphere with
    /// `||z - z'|| = d`; pair `i` uses stream `rng.split(i)`.
    pub fn mean_displacement(&self, d: f64, pairs: usize, rng: &RngStream) -> Result<f64> {
        if !(d > 0.0 && d < 2.0) {
            return Err(Error::Config(format!("distance must lie in (0, 2), got {d}")));
        }
        if pairs == 0 {
            return Err(Error::Config("need at least one pair".into()));
        }
        let n = self.matrix.ncols();
        let theta = 2.0 * (d / 2.0).asin();
        let total: f64 = (0..pairs as u64)
            .into_par_iter()
            .map(|i| {
                let mut stream = rng.split(i);
                let z = sample_unit_sphere(&mut stream, n, Field::Real).map(|c| c.re);
                let raw = sample_unit_sphere(&mut stream, n, Field::Real).map(|c| c.re);
                let tangent = &raw - &z * z.dot(&raw);
                let w = tangent.normalize();
                let z2 = &z * theta.cos() + &w * theta.sin();
                (self.step(&z) - self.step(&z2)).norm()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        Ok(total / pairs as f64)
    }
}

/// Mean one-step displacement of `algorithm` over `pairs` random pairs at distance `d`.
pub fn displacement_probe(
    algorithm: Algorithm,
    instance: &PhaseRetrievalInstance,
    d: f64,
    pairs: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let probe = DisplacementProbe::new(algorithm, instance)?;
    let index = rng.next_u64();
    let stream = rng.split(index);
    probe.mean_displacement(d, pairs, &stream)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementRow {
    pub algorithm: Algorithm,
    pub d: f64,
    pub mean_displacement: f64,
    pub pairs: usize,
    pub seed: u64,
}

/// Iteration cap for each basin-map run.
pub const BASIN_MAX_ITER: usize = 2000;

/// Label grid; `labels[row][col]`, label 0 is the true signal's basin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasinMap {
    pub labels: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BasinRow {
    pub row: usize,
    pub col: usize,
    pub label: usize,
}

impl BasinMap {
    pub fn grid(&self) -> usize {
        self.labels.len()
    }

    pub fn rows(&self) -> Vec<BasinRow> {
        self.labels
            .iter()
            .enumerate()
            .flat_map(|(row, line)| {
                line.iter()
                    .enumerate()
                    .map(move |(col, &label)| BasinRow { row, col, label })
            })
            .collect()
    }

    pub fn count(&self, label: usize) -> usize {
        self.labels.iter().flatten().filter(|&&l| l == label).count()
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen: Vec<usize> = self.labels.iter().flatten().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Grid coordinate `i` of `grid` evenly spaced points on `[-half_width, half_width]`.
pub fn grid_coordinate(i: usize, grid: usize, half_width: f64) -> f64 {
    if grid == 1 {
        0.0
    } else {
        -half_width + 2.0 * half_width * i as f64 / (grid - 1) as f64
    }
}

/// Runs alternating projections from `y_0 = B p` for every point `p` of the
/// square `center + a dirs[0] + b dirs[1]`, `|a|, |b| <= half_width`
/// (row index follows `b`, column index `a`), and labels the limits.
///
/// Limits are clustered greedily in row-major order: a limit joins the first
/// cluster whose representative is within `1e-4 ||x_true||`, where the true
/// signal is the representative of cluster 0.
pub fn basin_map(
    instance: &PhaseRetrievalInstance,
    center: &CVector,
    dirs: [&CVector; 2],
    half_width: f64,
    grid: usize,
) -> Result<BasinMap> {
    let truth = instance.signal.as_ref().ok_or(Error::MissingGroundTruth)?;
    let n = instance.n();
    if center.len() != n || dirs.iter().any(|d| d.len() != n) {
        return Err(Error::InvalidDimension("center and directions must have length n".into()));
    }
    if grid == 0 || !(half_width > 0.0) {
        return Err(Error::Config("need grid >= 1 and half_width > 0".into()));
    }
    let gram = [
        inner(dirs[0], dirs[0]).re,
        inner(dirs[0], dirs[1]).norm(),
        inner(dirs[1], dirs[1]).re,
    ];
    if (gram[0] - 1.0).abs() > 1e-8 || gram[1] > 1e-8 || (gram[2] - 1.0).abs() > 1e-8 {
        return Err(Error::Config("basin directions must be orthonormal".into()));
    }
    let solver = AlternatingProjections::new(instance)?;
    let cells: Vec<(usize, usize)> = (0..grid).flat_map(|r| (0..grid).map(move |c| (r, c))).collect();
    let limits = cells
        .par_iter()
        .map(|&(r, c)| {
            let a = grid_coordinate(c, grid, half_width);
            let b = grid_coordinate(r, grid, half_width);
            let p = center + dirs[0] * C64::from(a) + dirs[1] * C64::from(b);
            let y0 = instance.matrix() * p;
            solver
                .run_from(&y0, BASIN_MAX_ITER, crate::phase_retrieval::AP_TOL)
                .map(|run| run.estimate)
        })
        .collect::<Result<Vec<_>>>()?;

    let radius = 1e-4 * truth.norm();
    let mut reps: Vec<CVector> = vec![truth.clone()];
    let mut labels = vec![vec![0usize; grid]; grid];
    for (&(r, c), limit) in cells.iter().zip(&limits) {
        let label = match reps
            .iter()
            .position(|rep| dist_mod_phase_in(limit, rep, instance.field) <= radius)
        {
            Some(l) => l,
            None => {
                reps.push(limit.clone());
                reps.len() - 1
            }
        };
        labels[r][c] = label;
    }
    Ok(BasinMap { labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_gaussian;
    use crate::problems::{gen_phase_retrieval, EnsembleKind, MeasurementEnsemble};
    use crate::phase_retrieval::wf_grad;

    fn ring_point(x_s: &CVector, rng: &mut RngStream) -> CVector {
        let g = sample_gaussian(rng, x_s.len(), Field::Complex);
        let perp = &g - x_s * (inner(x_s, &g) / C64::from(x_s.norm_squared()));
        perp.normalize() * C64::from(x_s.norm() / std::f64::consts::SQRT_2)
    }

    #[test]
    fn expected_loss_literal_values() {
        let mut rng = RngStream::new(60);
        let s = sample_gaussian(&mut rng, 6, Field::Complex);
        assert!(expected_loss(&s, &s).abs() < 1e-12 * s.norm_squared().powi(2));
        let zero = CVector::zeros(6);
        assert!((expected_loss(&zero, &s) - s.norm_squared().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn expected_grad_vanishes_on_critical_sets() {
        let mut rng = RngStream::new(61);
        let s = sample_gaussian(&mut rng, 7, Field::Complex);
        let rotated = &s * C64::from_polar(1.0, 0.7);
        assert!(expected_grad(&rotated, &s).norm() < 1e-12);
        assert_eq!(expected_grad(&CVector::zeros(7), &s).norm(), 0.0);
        let r = ring_point(&s, &mut rng);
        assert!(expected_grad(&r, &s).norm() < 1e-12 * s.norm().powi(3));
    }

    #[test]
    fn expected_grad_matches_central_differences() {
        let mut rng = RngStream::new(62);
        for _ in 0..100 {
            let s = sample_gaussian(&mut rng, 5, Field::Complex);
            let x = sample_gaussian(&mut rng, 5, Field::Complex);
            let h = sample_gaussian(&mut rng, 5, Field::Complex);
            let eps = 1e-5;
            let fd = (expected_loss(&(&x + &h * C64::from(eps)), &s)
                - expected_loss(&(&x - &h * C64::from(eps)), &s))
                / (2.0 * eps);
            let exact = inner(&expected_grad(&x, &s), &h).re;
            assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
        }
    }

    #[test]
    fn expected_hess_form_values() {
        let mut rng = RngStream::new(63);
        let s = sample_gaussian(&mut rng, 8, Field::Complex);
        let r = ring_point(&s, &mut rng);
        let target = -2.0 * s.norm_squared().powi(2);
        assert!((expected_hess_form(&r, &s, &s) - target).abs() < 1e-10 * target.abs());

        let h = sample_gaussian(&mut rng, 8, Field::Complex);
        let at_zero = expected_hess_form(&CVector::zeros(8), &s, &h);
        let literal = 2.0 * (-s.norm_squared() * h.norm_squared() - inner(&s, &h).norm_sqr());
        assert!((at_zero - literal).abs() < 1e-12 * literal.abs());
        assert!(at_zero < 0.0);

        for _ in 0..20 {
            let x = sample_gaussian(&mut rng, 8, Field::Complex);
            let h = sample_gaussian(&mut rng, 8, Field::Complex);
            let q = expected_hess_form(&x, &s, &h);
            assert_eq!(q, expected_hess_form(&x, &s, &(-&h)));
            let eps = 1e-4;
            let fd = (expected_loss(&(&x + &h * C64::from(eps)), &s) - 2.0 * expected_loss(&x, &s)
                + expected_loss(&(&x - &h * C64::from(eps)), &s))
                / (eps * eps);
            assert!((fd - q).abs() < 1e-6 * q.abs().max(1.0), "{fd} vs {q}");
        }
    }

    #[test]
    fn classification() {
        let mut rng = RngStream::new(64);
        let s = sample_gaussian(&mut rng, 6, Field::Complex);
        assert_eq!(classify_critical(&s, &s, 1e-8).unwrap().tag, CriticalTag::Solution);
        assert_eq!(classify_critical(&CVector::zeros(6), &s, 1e-8).unwrap().tag, CriticalTag::Zero);
        let r = ring_point(&s, &mut rng);
        assert_eq!(classify_critical(&r, &s, 1e-8).unwrap().tag, CriticalTag::Ring);
        let generic = sample_gaussian(&mut rng, 6, Field::Complex);
        assert_eq!(classify_critical(&generic, &s, 1e-8).unwrap().tag, CriticalTag::None);
        assert!(classify_critical(&s, &s, 0.0).is_err());
    }

    #[test]
    fn z1_probe_concentrates() {
        let mut rng = RngStream::new(65);
        let inst = gen_phase_retrieval(20, 5000, EnsembleKind::ComplexGaussian, &mut rng).unwrap();
        let s = inst.signal.clone().unwrap();
        let target = -2.0 * s.norm_squared().powi(2);
        let r = ring_point(&s, &mut rng);
        let value = z1_hess_probe(&inst, &r, 1e-3).unwrap();
        assert!((value - target).abs() < 0.1 * target.abs(), "{value} vs {target}");

        let at_truth = z1_hess_probe(&inst, &s, 1e-3).unwrap();
        assert!(at_truth > -1e-8 * target.abs());

        let zero = CVector::zeros(20);
        let at_zero = z1_hess_probe(&inst, &zero, 1e-3).unwrap();
        let expected = expected_hess_form(&zero, &s, &s);
        assert!((at_zero - expected).abs() < 0.1 * expected.abs(), "{at_zero} vs {expected}");
    }

    #[test]
    fn z1_probe_needs_ground_truth() {
        let ens = MeasurementEnsemble::sample(EnsembleKind::ComplexGaussian, 3, 9, &mut RngStream::new(66)).unwrap();
        let inst = PhaseRetrievalInstance::from_moduli(ens, DVector::from_element(9, 1.0)).unwrap();
        assert!(matches!(z1_hess_probe(&inst, &CVector::zeros(3), 1e-3), Err(Error::MissingGroundTruth)));
    }

    #[test]
    fn real_probe_steps_match_complex_formulas() {
        let mut rng = RngStream::new(67);
        let inst = gen_phase_retrieval(6, 60, EnsembleKind::RealGaussian, &mut rng).unwrap();
        let z = sample_unit_sphere(&mut rng, 6, Field::Real);
        let zr = z.map(|c| c.re);

        let ap = DisplacementProbe::new(Algorithm::Ap, &inst).unwrap();
        let solver = AlternatingProjections::new(&inst).unwrap();
        let expected = solver.signal_step(&z, inst.matrix());
        assert!((ap.step(&zr).map(C64::from) - expected).norm() < 1e-10);

        let wf = DisplacementProbe::new(Algorithm::Wf, &inst).unwrap();
        let lambda = signal_norm_estimate(&inst);
        let expected = &z - wf_grad(&inst, &z) * C64::from(0.1 / (lambda * lambda));
        assert!((wf.step(&zr).map(C64::from) - expected).norm() < 1e-12);
    }

    #[test]
    fn displacement_probe_rejects_complex_and_bad_d() {
        let mut rng = RngStream::new(68);
        let inst = gen_phase_retrieval(4, 40, EnsembleKind::ComplexGaussian, &mut rng).unwrap();
        assert!(displacement_probe(Algorithm::Wf, &inst, 0.1, 5, &mut rng).is_err());
        let inst = gen_phase_retrieval(4, 40, EnsembleKind::RealGaussian, &mut rng).unwrap();
        assert!(displacement_probe(Algorithm::Wf, &inst, 2.5, 5, &mut rng).is_err());
        let mean = displacement_probe(Algorithm::Wf, &inst, 0.1, 20, &mut rng).unwrap();
        assert!(mean.is_finite() && mean > 0.0);
    }

    #[test]
    fn small_basin_map() {
        let mut rng = RngStream::new(69);
        let inst = gen_phase_retrieval(5, 40, EnsembleKind::RealGaussian, &mut rng).unwrap();
        let truth = inst.signal.clone().unwrap();
        let d0 = truth.normalize();
        let g = sample_gaussian(&mut rng, 5, Field::Real);
        let d1 = (&g - &d0 * inner(&d0, &g)).normalize();
        let hw = 2.0 * truth.norm();
        let map = basin_map(&inst, &CVector::zeros(5), [&d0, &d1], hw, 9).unwrap();
        assert_eq!(map.grid(), 9);
        assert_eq!(map.rows().len(), 81);
        // Column 6 of 9 sits at a = hw/2 = ||x||, row 4 at b = 0: the signal itself.
        assert_eq!(map.labels[4][6], 0);
        assert!(basin_map(&inst, &CVector::zeros(5), [&d0, &d0], hw, 3).is_err());
    }
}
