//! Rigid intensity-based registration of a moving volume onto a reference.
//!
//! Both volumes are turned into Gaussian pyramids. At the coarsest level an
//! optional translation grid search picks a starting point, then Powell's
//! method maximizes the similarity level by level, coarse to fine. The
//! optimizer works on `[tx, ty, tz, s·rx, s·ry, s·rz]` where `s` is
//! `angle_scale` (mm per radian) so that all six coordinates move the image
//! by comparable amounts. Rotations are about the reference volume centre.

pub mod powell;
mod similarity;

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use similarity::{similarity, PearsonCorrelation, Similarity, SimilarityMetric, MIN_OVERLAP};

use crate::transform::{RigidTransform, TransformParams};
use crate::volume::{Pyramid, Volume3, VolumeError};
use powell::PowellOptions;

/// Objective value used when a trial pose leaves too little overlap.
const INVALID_POSE_COST: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("insufficient overlap between volumes ({0:.3} < 0.1)")]
    InsufficientOverlap(f64),
    #[error("degenerate intensity: zero variance in sampled intensities")]
    DegenerateIntensity,
    #[error("sampling step must be >= 1")]
    BadStep,
    #[error("invalid registration config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingStep {
    /// Stride in voxels per axis at full resolution.
    pub fine: usize,
    /// Stride at every coarser level.
    pub coarse: usize,
}

impl Default for SamplingStep {
    fn default() -> Self {
        Self { fine: 2, coarse: 1 }
    }
}

impl SamplingStep {
    pub fn at_level(&self, level: usize) -> usize {
        if level == 0 {
            self.fine
        } else {
            self.coarse
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseSearch {
    pub enabled: bool,
    pub range_mm: f64,
    pub step_mm: f64,
}

impl Default for CoarseSearch {
    fn default() -> Self {
        Self { enabled: true, range_mm: 15.0, step_mm: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub n_levels: usize,
    pub sampling_step: SamplingStep,
    pub coarse_search: CoarseSearch,
    /// Mixed units: mm for translations, `angle_scale`-scaled radians for rotations.
    pub param_tolerance: f64,
    pub function_tolerance: f64,
    pub max_iterations: usize,
    pub success_min_score: f64,
    pub success_max_translation_mm: f64,
    pub success_max_rotation_deg: f64,
    /// mm per radian.
    pub angle_scale: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            n_levels: 3,
            sampling_step: SamplingStep::default(),
            coarse_search: CoarseSearch::default(),
            param_tolerance: 0.01,
            function_tolerance: 1e-5,
            max_iterations: 100,
            success_min_score: 0.6,
            success_max_translation_mm: 25.0,
            success_max_rotation_deg: 20.0,
            angle_scale: 50.0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        let bad = |m: &str| Err(RegistrationError::BadConfig(m.to_string()));
        if self.n_levels == 0 {
            return bad("n_levels must be >= 1");
        }
        if self.sampling_step.fine == 0 || self.sampling_step.coarse == 0 {
            return bad("sampling steps must be >= 1");
        }
        if self.coarse_search.enabled && !(self.coarse_search.range_mm > 0.0 && self.coarse_search.step_mm > 0.0) {
            return bad("coarse search range and step must be positive");
        }
        let positives = [
            self.param_tolerance,
            self.function_tolerance,
            self.success_max_translation_mm,
            self.success_max_rotation_deg,
            self.angle_scale,
        ];
        if positives.iter().any(|v| !(*v > 0.0)) {
            return bad("tolerances, plausibility bounds and angle_scale must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        Ok(())
    }

    /// The automatic success check.
    pub fn is_success(&self, score: f64, transform: &RigidTransform) -> bool {
        score >= self.success_min_score
            && transform.translation().norm() <= self.success_max_translation_mm
            && transform.rotation_angle().to_degrees() <= self.success_max_rotation_deg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps moving world coordinates to reference world coordinates.
    pub transform: RigidTransform,
    pub score: f64,
    pub success: bool,
    pub iterations: usize,
    pub overlap_fraction: f64,
    pub elapsed_seconds: f64,
}

/// Outcome of a single-level optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutcome {
    pub params: TransformParams,
    pub initial_score: f64,
    pub score: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Maximizes `metric` over the six rigid parameters on one resolution level.
#[allow(clippy::too_many_arguments)]
pub fn optimize_level<M: SimilarityMetric>(
    metric: &M,
    reference: &Volume3,
    moving: &Volume3,
    init: &TransformParams,
    center: Vector3<f64>,
    step: usize,
    cfg: &RegistrationConfig,
) -> Result<LevelOutcome, RegistrationError> {
    let s = cfg.angle_scale;
    let initial = metric.evaluate(reference, moving, &RigidTransform::from_params(init, center), step)?;

    let objective = |x: &[f64]| -> f64 {
        let x: &[f64; 6] = x.try_into().expect("six parameters");
        let t = RigidTransform::from_params(&TransformParams::from_scaled(x, s), center);
        match metric.evaluate(reference, moving, &t, step) {
            Ok(sim) => -sim.score,
            Err(_) => INVALID_POSE_COST,
        }
    };
    let spacing = reference.spacing();
    let opts = PowellOptions {
        ftol: cfg.function_tolerance,
        xtol: cfg.param_tolerance,
        max_iterations: cfg.max_iterations,
        initial_step: spacing.max(),
    };
    let out = powell::minimize(objective, init.to_scaled(s), &opts);
    let params = TransformParams::from_scaled(&out.x, s);
    let score = (-out.value).max(initial.score);
    let params = if -out.value < initial.score { *init } else { params };
    Ok(LevelOutcome {
        params,
        initial_score: initial.score,
        score,
        iterations: out.iterations,
        evaluations: out.evaluations,
    })
}

/// Registers `moving` onto `reference` with the default Pearson metric.
pub fn register(reference: &Volume3, moving: &Volume3, cfg: &RegistrationConfig) -> Result<RegistrationResult, RegistrationError> {
    register_with_metric(&PearsonCorrelation, reference, moving, cfg)
}

pub fn register_with_metric<M: SimilarityMetric>(
    metric: &M,
    reference: &Volume3,
    moving: &Volume3,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult, RegistrationError> {
    cfg.validate()?;
    let started = Instant::now();
    let center = reference.geometry().center();
    let ref_pyr = Pyramid::build(reference, cfg.n_levels)?;
    let mov_pyr = Pyramid::build(moving, cfg.n_levels)?;
    let coarsest = cfg.n_levels - 1;

    let mut params = TransformParams::zeros();
    if cfg.coarse_search.enabled {
        params = coarse_translation_search(
            metric,
            ref_pyr.level(coarsest),
            mov_pyr.level(coarsest),
            center,
            cfg.sampling_step.at_level(coarsest),
            &cfg.coarse_search,
        )
        .unwrap_or(params);
    }

    let mut iterations = 0;
    for level in (0..cfg.n_levels).rev() {
        let out = optimize_level(
            metric,
            ref_pyr.level(level),
            mov_pyr.level(level),
            &params,
            center,
            cfg.sampling_step.at_level(level),
            cfg,
        )?;
        log::debug!(
            "level {level}: score {:.4} -> {:.4}, {} iterations, {} evaluations",
            out.initial_score,
            out.score,
            out.iterations,
            out.evaluations
        );
        params = out.params;
        iterations += out.iterations;
    }

    let transform = RigidTransform::from_params(&params, center);
    let final_sim = metric.evaluate(reference, moving, &transform, cfg.sampling_step.fine)?;
    Ok(RegistrationResult {
        transform,
        score: final_sim.score,
        success: cfg.is_success(final_sim.score, &transform),
        iterations,
        overlap_fraction: final_sim.overlap,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Best translation on a regular grid, `None` if no cell has enough overlap.
fn coarse_translation_search<M: SimilarityMetric>(
    metric: &M,
    reference: &Volume3,
    moving: &Volume3,
    center: Vector3<f64>,
    step: usize,
    search: &CoarseSearch,
) -> Option<TransformParams> {
    let n = (search.range_mm / search.step_mm).floor() as i64;
    let mut best: Option<(f64, TransformParams)> = None;
    for iz in -n..=n {
        for iy in -n..=n {
            for ix in -n..=n {
                let t = [ix as f64 * search.step_mm, iy as f64 * search.step_mm, iz as f64 * search.step_mm];
                let p = TransformParams::new(t, [0.0; 3]);
                if let Ok(sim) = metric.evaluate(reference, moving, &RigidTransform::from_params(&p, center), step) {
                    // ties go to the smaller translation
                    let better = match &best {
                        None => true,
                        Some((s, bp)) => sim.score > *s || (sim.score == *s && p.t.norm() < bp.t.norm()),
                    };
                    if better {
                        best = Some((sim.score, p));
                    }
                }
            }
        }
    }
    best.map(|(_, p)| p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RegistrationConfig::default().validate().unwrap();
        let cfg: RegistrationConfig = serde_json::from_str(r#"{"n_levels": 2}"#).unwrap();
        assert_eq!(cfg.n_levels, 2);
        assert_eq!(cfg.angle_scale, 50.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = RegistrationConfig::default();
        cfg.param_tolerance = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RegistrationConfig::default();
        cfg.sampling_step.fine = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RegistrationConfig::default();
        cfg.coarse_search.step_mm = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn success_rule() {
        let cfg = RegistrationConfig::default();
        let id = RigidTransform::identity();
        assert!(cfg.is_success(0.6, &id));
        assert!(!cfg.is_success(0.59, &id));
        let far = RigidTransform::translation_only(Vector3::new(26.0, 0.0, 0.0));
        assert!(!cfg.is_success(0.9, &far));
        let rot = RigidTransform::from_params(&TransformParams::new([0.0; 3], [0.0, 0.0, 21f64.to_radians()]), Vector3::zeros());
        assert!(!cfg.is_success(0.9, &rot));
    }
}
