//! Target registration error from corresponding point fiducials.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::RigidTransform;

#[derive(Debug, Clone, PartialEq)]
pub struct FiducialPair {
    pub id: String,
    /// Reference-volume world position, mm.
    pub p_ref: Vector3<f64>,
    /// Moving-volume world position, mm.
    pub p_mov: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairError {
    pub id: String,
    pub distance_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreSummary {
    pub per_pair: Vec<PairError>,
    pub mean_mm: f64,
    pub max_mm: f64,
    pub n: usize,
}

/// Distances `‖T(p_mov) − p_ref‖`, pooled into a mean and a max.
pub fn tre(pairs: &[FiducialPair], transform: &RigidTransform) -> Result<TreSummary> {
    if pairs.is_empty() {
        return Err(Error::Empty("no fiducial pairs"));
    }
    if pairs.iter().any(|p| !p.p_ref.iter().chain(p.p_mov.iter()).all(|v| v.is_finite())) {
        return Err(Error::Invalid("fiducial coordinates must be finite".into()));
    }
    let per_pair: Vec<PairError> = pairs
        .iter()
        .map(|p| PairError { id: p.id.clone(), distance_mm: (transform.apply_point(p.p_mov) - p.p_ref).norm() })
        .collect();
    let mean = per_pair.iter().map(|e| e.distance_mm).sum::<f64>() / per_pair.len() as f64;
    let max = per_pair.iter().map(|e| e.distance_mm).fold(0.0, f64::max);
    Ok(TreSummary { n: per_pair.len(), per_pair, mean_mm: mean, max_mm: max })
}

/// Fiducial JSON: `{"pairs":[{"id":"f1","ref_mm":[..],"mov_mm":[..]}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialFile {
    #[serde(default = "fiducial_schema_version")]
    pub schema_version: String,
    pub pairs: Vec<FiducialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialEntry {
    pub id: String,
    pub ref_mm: [f64; 3],
    pub mov_mm: [f64; 3],
}

pub const FIDUCIAL_SCHEMA_VERSION: &str = "trusmap.fiducials/1";

fn fiducial_schema_version() -> String {
    FIDUCIAL_SCHEMA_VERSION.to_string()
}

impl FiducialFile {
    pub fn from_pairs(pairs: &[FiducialPair]) -> Self {
        FiducialFile {
            schema_version: fiducial_schema_version(),
            pairs: pairs
                .iter()
                .map(|p| FiducialEntry { id: p.id.clone(), ref_mm: p.p_ref.into(), mov_mm: p.p_mov.into() })
                .collect(),
        }
    }

    pub fn to_pairs(&self) -> Vec<FiducialPair> {
        self.pairs
            .iter()
            .map(|e| FiducialPair { id: e.id.clone(), p_ref: Vector3::from(e.ref_mm), p_mov: Vector3::from(e.mov_mm) })
            .collect()
    }
}
