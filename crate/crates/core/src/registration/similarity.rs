use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::RegistrationError;
use crate::transform::RigidTransform;
use crate::volume::Volume3;

/// Below this in-bounds fraction a similarity value is not trusted.
pub const MIN_OVERLAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    /// In `[-1, 1]`, higher is better.
    pub score: f64,
    /// Fraction of reference samples whose mapped position lies inside the moving volume.
    pub overlap: f64,
}

/// An intensity similarity between a reference volume and a transformed moving volume.
pub trait SimilarityMetric: Sync {
    fn evaluate(
        &self,
        reference: &Volume3,
        moving: &Volume3,
        transform: &RigidTransform,
        step: usize,
    ) -> Result<Similarity, RegistrationError>;
}

/// Pearson correlation over a strided reference grid, restricted to the overlap.
#[derive(Debug, Clone, Copy, Default)]
pub struct PearsonCorrelation;

impl SimilarityMetric for PearsonCorrelation {
    fn evaluate(
        &self,
        reference: &Volume3,
        moving: &Volume3,
        transform: &RigidTransform,
        step: usize,
    ) -> Result<Similarity, RegistrationError> {
        similarity(reference, moving, transform, step)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    total: u64,
    n: u64,
    sa: f64,
    sb: f64,
    saa: f64,
    sbb: f64,
    sab: f64,
}

impl Moments {
    fn add(&mut self, o: &Moments) {
        self.total += o.total;
        self.n += o.n;
        self.sa += o.sa;
        self.sb += o.sb;
        self.saa += o.saa;
        self.sbb += o.sbb;
        self.sab += o.sab;
    }
}

/// Pearson correlation between `reference` voxels on a `step`-strided grid and
/// `moving` sampled at `transform⁻¹` of those positions.
///
/// Slices are reduced in a fixed order, so the result does not depend on the
/// number of worker threads.
pub fn similarity(
    reference: &Volume3,
    moving: &Volume3,
    transform: &RigidTransform,
    step: usize,
) -> Result<Similarity, RegistrationError> {
    if step == 0 {
        return Err(RegistrationError::BadStep);
    }
    // reference index -> reference world -> moving world (T⁻¹) -> moving index
    let (a_ref, o_ref) = reference.geometry().index_to_world_affine();
    let inv = transform.inverse();
    let (w_mov, b_mov) = moving.geometry().world_to_index_affine();
    let m: Matrix3<f64> = w_mov * inv.rotation() * a_ref;
    let c: Vector3<f64> = w_mov * inv.apply_point(o_ref) + b_mov;

    let [nx, ny, nz] = reference.dims();
    let col_x = m.column(0) * step as f64;
    let ks: Vec<usize> = (0..nz).step_by(step).collect();

    let partial: Vec<Moments> = ks
        .par_iter()
        .map(|&k| {
            let mut acc = Moments::default();
            for j in (0..ny).step_by(step) {
                let mut p = c + m * Vector3::new(0.0, j as f64, k as f64);
                let row = nx * (j + ny * k);
                for i in (0..nx).step_by(step) {
                    acc.total += 1;
                    if let Some(b) = moving.sample_index(p.x, p.y, p.z) {
                        let a = reference.data()[row + i] as f64;
                        let b = b as f64;
                        acc.n += 1;
                        acc.sa += a;
                        acc.sb += b;
                        acc.saa += a * a;
                        acc.sbb += b * b;
                        acc.sab += a * b;
                    }
                    p += col_x;
                }
            }
            acc
        })
        .collect();

    let mut mom = Moments::default();
    for p in &partial {
        mom.add(p);
    }
    let overlap = if mom.total == 0 { 0.0 } else { mom.n as f64 / mom.total as f64 };
    if overlap < MIN_OVERLAP {
        return Err(RegistrationError::InsufficientOverlap(overlap));
    }
    let n = mom.n as f64;
    let va = mom.saa - mom.sa * mom.sa / n;
    let vb = mom.sbb - mom.sb * mom.sb / n;
    let cov = mom.sab - mom.sa * mom.sb / n;
    // relative threshold: rounding in the raw sums leaves ~1e-16 * saa behind
    if !(va > 1e-12 * mom.saa.max(1e-30)) || !(vb > 1e-12 * mom.sbb.max(1e-30)) {
        return Err(RegistrationError::DegenerateIntensity);
    }
    let score = (cov / (va * vb).sqrt()).clamp(-1.0, 1.0);
    Ok(Similarity { score, overlap })
}
