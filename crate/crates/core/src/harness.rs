//! Experiment runners behind `lowrank bench`. Every runner is a pure function
//! of its [`ExperimentConfig`]: per-trial random streams are split from the
//! seed by (grid index, trial index) and results are collected in order.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::burer_monteiro::{
    phasecut_cost, reference_rank, reference_sdp_solve_with, riemannian_gd, round_factor,
    RgdConfig,
};
use crate::error::{Error, Result};
use crate::landscape::{basin_map, Algorithm, BasinMap, DisplacementProbe, DisplacementRow};
use crate::numerics::{inner, sample_gaussian, CVector, RngStream};
use crate::phase_retrieval::{alternating_projections, AP_MAX_ITER, AP_TOL};
use crate::phase_sync::{gpm, loo_run};
use crate::problems::{gen_phase_retrieval, gen_sync, EnsembleKind, PhaseRetrievalInstance, DEFAULT_TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Experiment {
    Fig1,
    Fig3,
    Fig5,
    Basin,
    Sync,
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Experiment::Fig1),
            "fig3" => Ok(Experiment::Fig3),
            "fig5" => Ok(Experiment::Fig5),
            "basin" => Ok(Experiment::Basin),
            "sync" => Ok(Experiment::Sync),
            other => Err(Error::Config(format!("unknown experiment '{other}'"))),
        }
    }
}

/// Factor rank for the Burer-Monteiro curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Fixed(usize),
    /// `ceil(sqrt(2m)) + 1`.
    Reference,
}

impl Rank {
    pub fn resolve(self, m: usize) -> usize {
        match self {
            Rank::Fixed(p) => p,
            Rank::Reference => reference_rank(m),
        }
    }

    pub fn label(self) -> String {
        match self {
            Rank::Fixed(p) => format!("BM-p{p}"),
            Rank::Reference => "BM-pref".to_string(),
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Fixed(p) => write!(f, "{p}"),
            Rank::Reference => f.write_str("ref"),
        }
    }
}

impl FromStr for Rank {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ref" {
            return Ok(Rank::Reference);
        }
        match s.parse::<usize>() {
            Ok(p) if p >= 1 => Ok(Rank::Fixed(p)),
            _ => Err(Error::Config(format!("rank must be a positive integer or 'ref', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n: usize,
    /// Fixed measurement count (fig3 and basin).
    pub m: usize,
    pub mn_grid: Vec<f64>,
    /// Noise levels as fractions of `sqrt(n / log n)`.
    pub sigma_grid: Vec<f64>,
    pub d_grid: Vec<f64>,
    pub trials: usize,
    pub pairs: usize,
    pub grid: usize,
    pub seed: u64,
    pub ensembles: Vec<EnsembleKind>,
    pub ranks: Vec<Rank>,
    pub tau: f64,
    /// Adds the PhaseCut reference curve to fig1.
    pub reference: bool,
    /// Updates recorded by the leave-one-out diagnostics (0 disables them).
    pub loo_iterations: usize,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            n: 40,
            m: 0,
            mn_grid: Vec::new(),
            sigma_grid: Vec::new(),
            d_grid: Vec::new(),
            trials: 1,
            pairs: 0,
            grid: 0,
            seed: 0,
            ensembles: vec![EnsembleKind::ComplexGaussian],
            ranks: Vec::new(),
            tau: DEFAULT_TAU,
            reference: false,
            loo_iterations: 0,
            out: None,
        };
        match experiment {
            Experiment::Fig1 => Self {
                mn_grid: (0..12).map(|i| 2.0 + 0.5 * i as f64).collect(),
                trials: 200,
                ..base
            },
            Experiment::Fig3 => Self {
                n: 400,
                m: 4000,
                ensembles: vec![EnsembleKind::RealGaussian],
                d_grid: vec![0.0025, 0.01, 0.025, 0.05, 0.075, 0.1],
                pairs: 1000,
                ..base
            },
            Experiment::Fig5 => Self {
                n: 32,
                mn_grid: (0..=8).map(f64::from).collect(),
                trials: 20,
                ensembles: vec![EnsembleKind::ComplexGaussian, EnsembleKind::StructuredFrame],
                ranks: vec![Rank::Fixed(1), Rank::Fixed(2), Rank::Reference],
                ..base
            },
            Experiment::Basin => Self {
                n: 20,
                m: 400,
                ensembles: vec![EnsembleKind::RealGaussian],
                grid: 101,
                ..base
            },
            Experiment::Sync => Self {
                n: 200,
                sigma_grid: vec![0.0, 0.05, 0.1, 0.2, 0.3],
                loo_iterations: 30,
                ..base
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.mn_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0))
            || self.sigma_grid.iter().any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::Config("grids must hold finite non-negative values".into()));
        }
        Ok(())
    }

    fn stream(&self) -> RngStream {
        RngStream::new(self.seed)
    }
}

/// `round(ratio * n)`.
pub fn measurements_for(ratio: f64, n: usize) -> usize {
    (ratio * n as f64).round() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessRow {
    pub algorithm: String,
    pub ensemble: EnsembleKind,
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuccessCurve {
    pub rows: Vec<SuccessRow>,
}

impl SuccessCurve {
    pub fn rate(&self, algorithm: &str, ensemble: EnsembleKind, m: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.ensemble == ensemble && r.m == m)
            .map(|r| r.success_rate)
    }
}

/// Runs `trials` independent trials on grid point `grid_index`; a trial that
/// returns an error counts as a failure.
fn count_successes<F>(config: &ExperimentConfig, path: &[u64], trial: F) -> usize
where
    F: Fn(&mut RngStream) -> Result<bool> + Sync,
{
    let root = config.stream().split_path(path);
    let outcomes: Vec<bool> = (0..config.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = root.split(t);
            trial(&mut rng).unwrap_or_else(|e| {
                warn!("trial {t} at {path:?} failed: {e}");
                false
            })
        })
        .collect();
    outcomes.into_iter().filter(|&ok| ok).count()
}

fn success_row(
    config: &ExperimentConfig,
    algorithm: String,
    ensemble: EnsembleKind,
    m: usize,
    successes: usize,
) -> SuccessRow {
    SuccessRow {
        algorithm,
        ensemble,
        n: config.n,
        m,
        trials: config.trials,
        successes,
        success_rate: if config.trials == 0 {
            0.0
        } else {
            successes as f64 / config.trials as f64
        },
        seed: config.seed,
    }
}

fn within_tau(error: Option<f64>, tau: f64) -> Result<bool> {
    error.map(|e| e < tau).ok_or(Error::MissingGroundTruth)
}

/// Success rate of alternating projections from a random start (and
/// optionally of the PhaseCut reference solve) per measurement ratio.
pub fn run_fig1(config: &ExperimentConfig) -> Result<SuccessCurve> {
    config.validate()?;
    let ensemble = *config.ensembles.first().unwrap_or(&EnsembleKind::ComplexGaussian);
    let mut curve = SuccessCurve::default();
    for (g, &ratio) in config.mn_grid.iter().enumerate() {
        let m = measurements_for(ratio, config.n);
        let ap = count_successes(config, &[0, g as u64], |rng| {
            let inst = gen_phase_retrieval(config.n, m, ensemble, rng)?;
            let report = alternating_projections(&inst, rng, AP_MAX_ITER, AP_TOL)?;
            within_tau(report.rel_error_mod_phase, config.tau)
        });
        curve.rows.push(success_row(config, "AP".into(), ensemble, m, ap));
        if config.reference {
            let reference = count_successes(config, &[0, g as u64], |rng| {
                let inst = gen_phase_retrieval(config.n, m, ensemble, rng)?;
                let sdp = phasecut_cost(&inst)?;
                let (_, v) = reference_sdp_solve_with(&sdp, rng, &phasecut_descent(&inst))?;
                within_tau(inst.relative_error(&round_factor(&sdp, &v)?), config.tau)
            });
            curve.rows.push(success_row(config, "PhaseCut-ref".into(), ensemble, m, reference));
        }
    }
    Ok(curve)
}

/// Mean one-step displacement of AP and WF on one real instance with a unit-norm signal.
pub fn run_fig3(config: &ExperimentConfig) -> Result<Vec<DisplacementRow>> {
    config.validate()?;
    let root = config.stream();
    let inst = gen_phase_retrieval(config.n, config.m, EnsembleKind::RealGaussian, &mut root.split(0))?
        .with_unit_signal()?;
    let mut rows = Vec::new();
    for (a, algorithm) in [Algorithm::Wf, Algorithm::Ap].into_iter().enumerate() {
        let probe = DisplacementProbe::new(algorithm, &inst)?;
        for (i, &d) in config.d_grid.iter().enumerate() {
            let stream = root.split_path(&[1, a as u64, i as u64]);
            rows.push(DisplacementRow {
                algorithm,
                d,
                mean_displacement: probe.mean_displacement(d, config.pairs, &stream)?,
                pairs: config.pairs,
                seed: config.seed,
            });
        }
    }
    Ok(rows)
}

/// Iteration cap for each Burer-Monteiro PhaseCut run.
pub const FIG5_MAX_ITER: usize = 20_000;

/// Descent settings for a PhaseCut cost: the gradient threshold
/// `grad_tol * m` equals `1e-7 lambda^2 sqrt(m)`, i.e. about `1e-7 lambda^2`
/// per row, where `lambda^2 = |b|^2 / m` sets the scale of `C`.
pub fn phasecut_descent(instance: &PhaseRetrievalInstance) -> RgdConfig {
    let m = instance.m() as f64;
    let scale = instance.moduli.norm_squared() / m;
    RgdConfig {
        max_iter: FIG5_MAX_ITER,
        grad_tol: (1e-7 * scale / m.sqrt()).max(f64::MIN_POSITIVE),
        ..RgdConfig::default()
    }
}

/// Burer-Monteiro PhaseCut success curves per (ensemble, rank, ratio).
pub fn run_fig5(config: &ExperimentConfig) -> Result<SuccessCurve> {
    config.validate()?;
    let mut curve = SuccessCurve::default();
    for (e, &ensemble) in config.ensembles.iter().enumerate() {
        for (r, &rank) in config.ranks.iter().enumerate() {
            for (g, &ratio) in config.mn_grid.iter().enumerate() {
                let m = measurements_for(ratio, config.n);
                let path = [2, e as u64, r as u64, g as u64];
                let successes = count_successes(config, &path, |rng| {
                    let inst = gen_phase_retrieval(config.n, m, ensemble, rng)?;
                    let sdp = phasecut_cost(&inst)?;
                    let rgd = phasecut_descent(&inst);
                    let (_, report) = riemannian_gd(&sdp, rank.resolve(m), rng, &rgd)?;
                    within_tau(report.rel_error_mod_phase, config.tau)
                });
                curve.rows.push(success_row(config, rank.label(), ensemble, m, successes));
            }
        }
    }
    Ok(curve)
}

/// Basin map around the origin on the plane spanned by the signal direction
/// and a random orthogonal direction, with half-width `2 ||x||`.
pub fn run_basin(config: &ExperimentConfig) -> Result<BasinMap> {
    config.validate()?;
    let mut rng = config.stream().split(3);
    let ensemble = *config.ensembles.first().unwrap_or(&EnsembleKind::RealGaussian);
    let inst = gen_phase_retrieval(config.n, config.m, ensemble, &mut rng)?;
    let (d0, d1) = basin_plane(&inst, &mut rng)?;
    let truth_norm = inst.signal.as_ref().map(|s| s.norm()).unwrap_or(1.0);
    basin_map(&inst, &CVector::zeros(config.n), [&d0, &d1], 2.0 * truth_norm, config.grid)
}

fn basin_plane(inst: &PhaseRetrievalInstance, rng: &mut RngStream) -> Result<(CVector, CVector)> {
    let truth = inst.signal.as_ref().ok_or(Error::MissingGroundTruth)?;
    if inst.n() < 2 {
        return Err(Error::InvalidDimension("a basin plane needs n >= 2".into()));
    }
    let d0 = truth.normalize();
    let g = sample_gaussian(rng, inst.n(), inst.field);
    let d1 = (&g - &d0 * inner(&d0, &g)).normalize();
    Ok((d0, d1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncRow {
    pub sigma_fraction: f64,
    pub sigma: f64,
    pub n: usize,
    pub trial: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub rel_error: f64,
    pub decay_rate: f64,
    pub fit_r2: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LooRow {
    pub sigma_fraction: f64,
    pub trial: usize,
    pub t: usize,
    pub max_dist_aux: f64,
    pub max_corr_main: f64,
    pub max_corr_aux: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyncOutput {
    pub convergence: Vec<SyncRow>,
    pub loo: Vec<LooRow>,
}

/// `sqrt(n / log n)`, the noise scale of the synchronization guarantees.
pub fn sync_noise_scale(n: usize) -> f64 {
    (n as f64 / (n as f64).ln()).sqrt()
}

/// Least-squares line through `(t, ln r_t)` over entries above `floor`.
/// Returns `(rho, r2)` with `rho = exp(slope)`; NaN when fewer than three points remain.
pub fn log_linear_fit(trace: &[f64], floor: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > floor)
        .map(|(t, &r)| (t as f64, r.ln()))
        .collect();
    if pts.len() < 3 {
        return (f64::NAN, f64::NAN);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope.exp(), r2)
}

/// Iteration cap for the synchronization benchmark.
pub const SYNC_MAX_ITER: usize = 1000;

/// GPM convergence per noise level, plus leave-one-out diagnostics for every
/// positive noise level when `loo_iterations > 0`.
pub fn run_sync(config: &ExperimentConfig) -> Result<SyncOutput> {
    config.validate()?;
    let n = config.n;
    let scale = sync_noise_scale(n);
    let root = config.stream();
    let tol = 1e-12 * (n as f64).sqrt();
    let mut out = SyncOutput::default();
    for (g, &fraction) in config.sigma_grid.iter().enumerate() {
        let sigma = fraction * scale;
        let runs = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = root.split_path(&[4, g as u64, t as u64]);
                let inst = gen_sync(n, sigma, &mut rng)?;
                let run = gpm(&inst, SYNC_MAX_ITER, tol)?;
                let loo = if config.loo_iterations > 0 && sigma > 0.0 {
                    Some(loo_run(&inst, config.loo_iterations)?)
                } else {
                    None
                };
                Ok((run, loo))
            })
            .collect::<Result<Vec<_>>>()?;
        for (t, (run, loo)) in runs.into_iter().enumerate() {
            let trace = &run.report.residual_trace;
            let (decay_rate, fit_r2) = log_linear_fit(trace, 1e3 * f64::EPSILON * n as f64);
            out.convergence.push(SyncRow {
                sigma_fraction: fraction,
                sigma,
                n,
                trial: t,
                iterations: run.report.iterations,
                converged: run.report.converged,
                final_residual: trace.last().copied().unwrap_or(f64::NAN),
                rel_error: run.report.rel_error_mod_phase.unwrap_or(f64::NAN),
                decay_rate,
                fit_r2,
                seed: config.seed,
            });
            if let Some(diag) = loo {
                for i in 0..diag.len() {
                    out.loo.push(LooRow {
                        sigma_fraction: fraction,
                        trial: t,
                        t: i + 1,
                        max_dist_aux: diag.max_dist_aux[i],
                        max_corr_main: diag.max_corr_main[i],
                        max_corr_aux: diag.max_corr_aux[i],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Serializes `rows` as CSV with a header row.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::NumericFailure(e.to_string()))
}

/// Writes `rows` to `path`, or to stdout when `path` is `None`.
pub fn emit_csv<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_csv(rows, std::fs::File::create(p)?),
        None => write_csv(rows, std::io::stdout().lock()),
    }
}

/// Path of the leave-one-out companion file: `out.csv` becomes `out.loo.csv`.
pub fn loo_path(out: &Path) -> PathBuf {
    out.with_extension("loo.csv")
}

/// Runs `config.experiment` and writes its CSV output(s).
pub fn run_and_emit(config: &ExperimentConfig) -> Result<()> {
    let out = config.out.as_deref();
    match config.experiment {
        Experiment::Fig1 => emit_csv(&run_fig1(config)?.rows, out),
        Experiment::Fig3 => emit_csv(&run_fig3(config)?, out),
        Experiment::Fig5 => emit_csv(&run_fig5(config)?.rows, out),
        Experiment::Basin => emit_csv(&run_basin(config)?.rows(), out),
        Experiment::Sync => {
            let result = run_sync(config)?;
            emit_csv(&result.convergence, out)?;
            if !result.loo.is_empty() {
                match out {
                    Some(p) => emit_csv(&result.loo, Some(&loo_path(p)))?,
                    None => {
                        println!();
                        emit_csv(&result.loo, None)?;
                    }
                }
            }
            Ok(())
        }
    }
}
