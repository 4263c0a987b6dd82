//! JSON interchange for instances and raw unit-diagonal SDPs.
//!
//! Complex numbers are `[re, im]` pairs, vectors are arrays of pairs and
//! matrices are arrays of rows. Every document carries a `"problem"` tag:
//!
//! ```text
//! {"problem": "phase_retrieval", "field": "complex", "ensemble": "complex-gaussian",
//!  "n": 2, "m": 3, "measurements": [[[re, im], ...], ...], "moduli": [...],
//!  "signal": [[re, im], ...] | null}
//! {"problem": "sync", "n": 3, "sigma": 0.5, "observations": [[...]], "signal": [...],
//!  "noise": [[...]]}
//! {"problem": "unit_diag_sdp", "dim": 4, "cost": [[...]]}
//! ```

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize, Serializer};

use crate::burer_monteiro::UnitDiagSdp;
use crate::error::{Error, Result};
use crate::numerics::{CMatrix, CVector, Field, HermitianMatrix, C64};
use crate::problems::{EnsembleKind, MeasurementEnsemble, PhaseRetrievalInstance, SyncInstance};

pub type Pair = [f64; 2];

pub fn vector_to_pairs(v: &CVector) -> Vec<Pair> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn pairs_to_vector(pairs: &[Pair]) -> CVector {
    CVector::from_iterator(pairs.len(), pairs.iter().map(|p| C64::new(p[0], p[1])))
}

pub fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<Pair>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<Pair>], ncols: usize) -> Result<CMatrix> {
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::InvalidDimension(format!(
            "row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    Ok(CMatrix::from_fn(rows.len(), ncols, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

pub fn serialize_cvector<S: Serializer>(v: &CVector, s: S) -> std::result::Result<S::Ok, S::Error> {
    vector_to_pairs(v).serialize(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum InstanceFile {
    PhaseRetrieval {
        field: Field,
        ensemble: EnsembleKind,
        n: usize,
        m: usize,
        measurements: Vec<Vec<Pair>>,
        moduli: Vec<f64>,
        signal: Option<Vec<Pair>>,
    },
    Sync {
        n: usize,
        sigma: f64,
        observations: Vec<Vec<Pair>>,
        signal: Vec<Pair>,
        noise: Vec<Vec<Pair>>,
    },
    UnitDiagSdp {
        dim: usize,
        cost: Vec<Vec<Pair>>,
    },
}

/// A decoded instance document.
#[derive(Debug, Clone)]
pub enum Instance {
    PhaseRetrieval(PhaseRetrievalInstance),
    Sync(SyncInstance),
    Sdp(UnitDiagSdp),
}

impl From<&PhaseRetrievalInstance> for InstanceFile {
    fn from(inst: &PhaseRetrievalInstance) -> Self {
        InstanceFile::PhaseRetrieval {
            field: inst.field,
            ensemble: inst.ensemble.kind,
            n: inst.n(),
            m: inst.m(),
            measurements: matrix_to_rows(inst.matrix()),
            moduli: inst.moduli.iter().copied().collect(),
            signal: inst.signal.as_ref().map(vector_to_pairs),
        }
    }
}

impl From<&SyncInstance> for InstanceFile {
    fn from(inst: &SyncInstance) -> Self {
        InstanceFile::Sync {
            n: inst.n(),
            sigma: inst.sigma,
            observations: matrix_to_rows(inst.observations.matrix()),
            signal: vector_to_pairs(&inst.signal),
            noise: matrix_to_rows(inst.noise.matrix()),
        }
    }
}

impl From<&UnitDiagSdp> for InstanceFile {
    fn from(sdp: &UnitDiagSdp) -> Self {
        InstanceFile::UnitDiagSdp {
            dim: sdp.dim(),
            cost: matrix_to_rows(sdp.cost.matrix()),
        }
    }
}

impl InstanceFile {
    pub fn decode(self) -> Result<Instance> {
        match self {
            InstanceFile::PhaseRetrieval {
                field,
                ensemble,
                n,
                m,
                measurements,
                moduli,
                signal,
            } => {
                if measurements.len() != m {
                    return Err(Error::InvalidDimension(format!(
                        "{} measurement rows, header says {m}",
                        measurements.len()
                    )));
                }
                let matrix = rows_to_matrix(&measurements, n)?;
                let ens = MeasurementEnsemble {
                    kind: ensemble,
                    matrix,
                };
                let mut inst =
                    PhaseRetrievalInstance::from_moduli(ens, DVector::from_vec(moduli))?;
                inst.field = field;
                if let Some(s) = signal {
                    if s.len() != n {
                        return Err(Error::InvalidDimension(format!(
                            "signal has length {}, expected {n}",
                            s.len()
                        )));
                    }
                    inst.signal = Some(pairs_to_vector(&s));
                }
                Ok(Instance::PhaseRetrieval(inst))
            }
            InstanceFile::Sync {
                n,
                sigma,
                observations,
                signal,
                noise,
            } => {
                if signal.len() != n || observations.len() != n || noise.len() != n {
                    return Err(Error::InvalidDimension(format!(
                        "sync document is inconsistent with n = {n}"
                    )));
                }
                let noise = HermitianMatrix::try_new(rows_to_matrix(&noise, n)?, 1e-12)?;
                let inst = SyncInstance::from_parts(pairs_to_vector(&signal), sigma, noise)?;
                let stored = rows_to_matrix(&observations, n)?;
                if (&stored - inst.observations.matrix()).norm()
                    > 1e-9 * (1.0 + stored.norm())
                {
                    return Err(Error::Config(
                        "observations differ from signal outer product plus noise".into(),
                    ));
                }
                Ok(Instance::Sync(inst))
            }
            InstanceFile::UnitDiagSdp { dim, cost } => {
                if cost.len() != dim {
                    return Err(Error::InvalidDimension(format!(
                        "cost has {} rows, expected {dim}",
                        cost.len()
                    )));
                }
                let cost = HermitianMatrix::try_new(rows_to_matrix(&cost, dim)?, 1e-12)?;
                Ok(Instance::Sdp(UnitDiagSdp::raw(cost)))
            }
        }
    }
}

pub fn to_json(doc: &InstanceFile) -> Result<String> {
    Ok(serde_json::to_string(doc)?)
}

pub fn from_json(text: &str) -> Result<Instance> {
    serde_json::from_str::<InstanceFile>(text)?.decode()
}

pub fn write_instance(path: &Path, doc: &InstanceFile) -> Result<()> {
    std::fs::write(path, to_json(doc)?)?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<Instance> {
    from_json(&std::fs::read_to_string(path)?)
}
