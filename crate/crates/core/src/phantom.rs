//! Deterministic synthetic TRUS-like volumes with known ground truth.
//!
//! The anatomy is an ellipsoidal gland on a darker background with a 1.5 mm
//! linear boundary ramp, multiplied by log-normal speckle and overlaid with
//! small bright spheres standing in for calcifications. The volume grid is
//! centred on the world origin and so is the ellipsoid.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`). Speckle uses one ChaCha
//! stream per z-slice of the noise seed, so output does not depend on how
//! slices are scheduled across threads.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::biopsy::{BiopsyRecord, NeedleSegment, Session};
use crate::error::{Error, Result};
use crate::fiducial::FiducialPair;
use crate::sector::{Aabb, SectorGrid, Segment, TargetLabel};
use crate::transform::RigidTransform;
use crate::volume::{Geometry, IntensityType, Volume3};

/// Width of the gland boundary ramp, mm.
const BOUNDARY_RAMP_MM: f64 = 1.5;
/// Width of the fiducial sphere edge ramp, mm.
const FIDUCIAL_RAMP_MM: f64 = 0.5;
const MIN_FIDUCIAL_SEPARATION_MM: f64 = 5.0;
const ELLIPSOID_MARGIN_MM: f64 = 2.0;
/// Largest motion `generate_moving` accepts.
pub const MAX_PLAUSIBLE_TRANSLATION_MM: f64 = 25.0;
pub const MAX_PLAUSIBLE_ROTATION_DEG: f64 = 20.0;

/// Seed-space offsets keep the independent random streams apart.
const FIDUCIAL_STREAM: u64 = 0x6669_6475_6369_616c;
const MOTION_STREAM: u64 = 0x6d6f_7469_6f6e_0000;
const AIM_STREAM: u64 = 0x6169_6d00_0000_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub semi_axes: [f64; 3],
    pub prostate_mean: f64,
    pub background_mean: f64,
    /// σ of the log of the multiplicative speckle.
    pub speckle_sigma: f64,
    pub n_fiducials: usize,
    pub fiducial_radius: f64,
    pub fiducial_intensity: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128; 3],
            spacing: [0.5; 3],
            semi_axes: [25.0, 20.0, 21.5],
            prostate_mean: 120.0,
            background_mean: 60.0,
            speckle_sigma: 0.25,
            n_fiducials: 5,
            fiducial_radius: 1.0,
            fiducial_intensity: 230.0,
            seed: 1,
        }
    }
}

impl PhantomConfig {
    pub fn geometry(&self) -> Geometry {
        let origin: [f64; 3] = std::array::from_fn(|a| -((self.dims[a] - 1) as f64) * self.spacing[a] / 2.0);
        Geometry::new(self.dims, self.spacing, origin)
    }

    /// Analytic ellipsoid volume in ml.
    pub fn ellipsoid_volume_ml(&self) -> f64 {
        let [a, b, c] = self.semi_axes;
        4.0 / 3.0 * std::f64::consts::PI * a * b * c / 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Phantom(m));
        self.geometry().validate()?;
        if self.semi_axes.iter().any(|&s| !(s > 0.0)) {
            return bad("semi-axes must be positive".into());
        }
        for a in 0..3 {
            let half = (self.dims[a] - 1) as f64 * self.spacing[a] / 2.0;
            if self.semi_axes[a] + ELLIPSOID_MARGIN_MM > half {
                return bad(format!(
                    "ellipsoid semi-axis {} mm does not fit axis {a} (half extent {half} mm) with a 2 mm margin",
                    self.semi_axes[a]
                ));
            }
        }
        if self.n_fiducials < 3 {
            return bad("at least 3 fiducials are required".into());
        }
        if !(self.fiducial_radius > 0.0) || !(self.speckle_sigma >= 0.0) || !self.speckle_sigma.is_finite() {
            return bad("fiducial radius must be positive and speckle sigma non-negative".into());
        }
        Ok(())
    }
}

/// Transform and fiducials relating a moving volume to the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Moving → reference.
    pub transform: RigidTransform,
    pub fiducials_ref: Vec<Vector3<f64>>,
    pub fiducials_mov: Vec<Vector3<f64>>,
    pub config: PhantomConfig,
}

impl GroundTruth {
    pub fn fiducial_pairs(&self) -> Vec<FiducialPair> {
        self.fiducials_ref
            .iter()
            .zip(&self.fiducials_mov)
            .enumerate()
            .map(|(i, (r, m))| FiducialPair { id: format!("f{}", i + 1), p_ref: *r, p_mov: *m })
            .collect()
    }
}

/// The noiseless anatomy plus fiducial layout of one phantom.
#[derive(Debug, Clone)]
pub struct Phantom {
    cfg: PhantomConfig,
    geometry: Geometry,
    fiducials: Vec<Vector3<f64>>,
}

impl Phantom {
    pub fn new(cfg: &PhantomConfig) -> Result<Self> {
        cfg.validate()?;
        let fiducials = place_fiducials(cfg)?;
        Ok(Self { cfg: cfg.clone(), geometry: cfg.geometry(), fiducials })
    }

    pub fn config(&self) -> &PhantomConfig {
        &self.cfg
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Fiducial centres in the reference frame.
    pub fn fiducials(&self) -> &[Vector3<f64>] {
        &self.fiducials
    }

    /// Normalized ellipsoid radius: `< 1` inside.
    pub fn ellipsoid_radius(&self, p: &Vector3<f64>) -> f64 {
        let [a, b, c] = self.cfg.semi_axes;
        ((p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2)).sqrt()
    }

    /// Bounding box of the gland, used as the planning grid box.
    pub fn gland_bbox(&self) -> Aabb {
        let s = Vector3::from(self.cfg.semi_axes);
        Aabb::new(-s, s)
    }

    pub fn planning_grid(&self) -> SectorGrid {
        SectorGrid::build(self.gland_bbox()).expect("semi-axes validated positive")
    }

    /// Voxel-counted gland volume in ml.
    pub fn counted_volume_ml(&self) -> f64 {
        let [nx, ny, nz] = self.geometry.dims;
        let mut inside = 0usize;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = self.geometry.index_to_world(Vector3::new(i as f64, j as f64, k as f64));
                    if self.ellipsoid_radius(&p) < 1.0 {
                        inside += 1;
                    }
                }
            }
        }
        let voxel_mm3: f64 = self.cfg.spacing.iter().product();
        inside as f64 * voxel_mm3 / 1000.0
    }

    /// Noiseless tissue intensity and fiducial blend weight at reference-frame point `p`.
    fn field(&self, p: &Vector3<f64>) -> (f64, f64) {
        let [a, b, c] = self.cfg.semi_axes;
        let r = self.ellipsoid_radius(p);
        // first-order signed distance to the surface: (r - 1) / |∇r|
        let w_gland = if r == 0.0 {
            1.0
        } else {
            let grad = Vector3::new(p.x / (a * a), p.y / (b * b), p.z / (c * c)).norm() / r;
            let dist = (r - 1.0) / grad;
            (0.5 - dist / BOUNDARY_RAMP_MM).clamp(0.0, 1.0)
        };
        let tissue = self.cfg.background_mean + (self.cfg.prostate_mean - self.cfg.background_mean) * w_gland;

        let nearest = self.fiducials.iter().map(|f| (p - f).norm()).fold(f64::INFINITY, f64::min);
        let w_fid = ((self.cfg.fiducial_radius + FIDUCIAL_RAMP_MM / 2.0 - nearest) / FIDUCIAL_RAMP_MM).clamp(0.0, 1.0);
        (tissue, w_fid)
    }

    /// Renders the phantom as seen by a volume whose world frame maps to the
    /// reference frame through `to_reference`, with speckle from `noise_seed`.
    pub fn render(&self, to_reference: &RigidTransform, noise_seed: u64) -> Volume3 {
        let geo = self.geometry.clone();
        let [nx, ny, nz] = geo.dims;
        let sigma = self.cfg.speckle_sigma;
        let speckle = LogNormal::new(-sigma * sigma / 2.0, sigma).expect("sigma validated");
        let identity = to_reference.is_exact_identity();
        let fid_value = self.cfg.fiducial_intensity;

        let mut data = vec![0.0f32; nx * ny * nz];
        use rayon::prelude::*;
        data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            rng.set_stream(k as u64);
            for j in 0..ny {
                for i in 0..nx {
                    let q = geo.index_to_world(Vector3::new(i as f64, j as f64, k as f64));
                    let p = if identity { q } else { to_reference.apply_point(q) };
                    let (tissue, w_fid) = self.field(&p);
                    let noisy = tissue * speckle.sample(&mut rng);
                    let v = noisy * (1.0 - w_fid) + fid_value * w_fid;
                    slice[i + nx * j] = IntensityType::U8.quantize(v as f32);
                }
            }
        });
        Volume3::new(geo, data, IntensityType::U8).expect("geometry validated")
    }

    pub fn reference(&self) -> Volume3 {
        self.render(&RigidTransform::identity(), self.cfg.seed)
    }

    /// Moving volume for a ground-truth moving→reference transform, within plausibility bounds.
    pub fn moving(&self, t_true: &RigidTransform, noise_seed: u64) -> Result<(Volume3, GroundTruth)> {
        check_plausible(t_true)?;
        Ok(self.moving_unchecked(t_true, noise_seed))
    }

    /// As [`Phantom::moving`] without the plausibility check, for out-of-range stress tests.
    pub fn moving_unchecked(&self, t_true: &RigidTransform, noise_seed: u64) -> (Volume3, GroundTruth) {
        let vol = self.render(t_true, noise_seed);
        (vol, self.ground_truth(t_true))
    }

    pub fn ground_truth(&self, t_true: &RigidTransform) -> GroundTruth {
        let inv = t_true.inverse();
        GroundTruth {
            transform: *t_true,
            fiducials_ref: self.fiducials.clone(),
            fiducials_mov: self.fiducials.iter().map(|f| inv.apply_point(*f)).collect(),
            config: self.cfg.clone(),
        }
    }
}

fn check_plausible(t: &RigidTransform) -> Result<()> {
    let tn = t.translation().norm();
    let ang = t.rotation_angle().to_degrees();
    if tn > MAX_PLAUSIBLE_TRANSLATION_MM || ang > MAX_PLAUSIBLE_ROTATION_DEG {
        return Err(Error::ImplausibleTransform(format!("translation {tn:.2} mm, rotation {ang:.2} deg")));
    }
    Ok(())
}

fn place_fiducials(cfg: &PhantomConfig) -> Result<Vec<Vector3<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ FIDUCIAL_STREAM);
    let [a, b, c] = cfg.semi_axes;
    let min_semi = a.min(b).min(c);
    // keep the whole sphere, plus a margin, inside the gland
    let r_max = 1.0 - (cfg.fiducial_radius + ELLIPSOID_MARGIN_MM) / min_semi;
    if r_max <= 0.0 {
        return Err(Error::Phantom("gland too small for fiducials".into()));
    }
    let mut out: Vec<Vector3<f64>> = Vec::with_capacity(cfg.n_fiducials);
    let mut attempts = 0;
    while out.len() < cfg.n_fiducials {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Phantom(format!("could not place {} separated fiducials", cfg.n_fiducials)));
        }
        let p = Vector3::new(a * rng.random_range(-1.0..1.0), b * rng.random_range(-1.0..1.0), c * rng.random_range(-1.0..1.0));
        let r = ((p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2)).sqrt();
        if r >= r_max {
            continue;
        }
        if out.iter().all(|q| (p - q).norm() >= MIN_FIDUCIAL_SEPARATION_MM) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Convenience wrapper: reference volume and its phantom.
pub fn generate_reference(cfg: &PhantomConfig) -> Result<(Volume3, Phantom)> {
    let ph = Phantom::new(cfg)?;
    Ok((ph.reference(), ph))
}

/// Moving volume for `t_true` with independent speckle.
pub fn generate_moving(cfg: &PhantomConfig, t_true: &RigidTransform, noise_seed: u64) -> Result<(Volume3, GroundTruth)> {
    Phantom::new(cfg)?.moving(t_true, noise_seed)
}

/// Random rigid motion with `|t| <= max_mm` and rotation angle `<= max_deg`, about `center`.
pub fn random_motion(rng: &mut impl Rng, max_mm: f64, max_deg: f64, center: Vector3<f64>) -> RigidTransform {
    let unit = |rng: &mut dyn rand::RngCore| loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    };
    let t_dir = unit(rng);
    let t_len = max_mm * rng.random::<f64>().cbrt();
    let axis = Unit::new_normalize(unit(rng));
    let angle = max_deg.to_radians() * rng.random::<f64>();
    let rot = *Rotation3::from_axis_angle(&axis, angle).matrix();
    RigidTransform::new(rot, t_dir * t_len, center).expect("axis-angle rotation is proper")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub n_biopsies: usize,
    pub motion_mm: f64,
    pub motion_deg: f64,
    /// σ of the Gaussian offset added to each needle endpoint, mm.
    pub aim_sigma_mm: f64,
    pub seed: u64,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self { n_biopsies: 12, motion_mm: 10.0, motion_deg: 10.0, aim_sigma_mm: 0.0, seed: 1 }
    }
}

pub struct SyntheticSession {
    pub reference: Volume3,
    pub moving: Vec<Volume3>,
    pub session: Session,
    pub grid: SectorGrid,
    pub truths: Vec<GroundTruth>,
}

pub fn volume_id(biopsy_index: usize) -> String {
    format!("bx{biopsy_index:02}")
}

/// Reference volume plus one moving volume per biopsy. Needles follow each
/// intended sector's centreline along `z` at mid AP depth, perturbed by the
/// aiming error, and are expressed in their moving volume's frame.
///
/// Motions are drawn independently of `aim_sigma_mm`, so two specs that differ
/// only in aiming error produce identical volumes.
/// Needle in the reference frame aimed at `label`: the cranio-caudal centerline
/// of the sector through its centre, each endpoint offset by isotropic
/// Gaussian noise of `sigma_mm` per axis.
pub fn aim_needle(grid: &SectorGrid, label: TargetLabel, sigma_mm: f64, rng: &mut impl Rng) -> Segment {
    let cell = grid.sector_box(label);
    let mid = grid.sector_center(label);
    let half = Vector3::new(0.0, 0.0, (cell.max.z - cell.min.z) / 2.0);
    let mut jitter = || -> Vector3<f64> {
        let n = Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        n * sigma_mm
    };
    let entry = mid - half + jitter();
    let tip = mid + half + jitter();
    Segment::new(entry, tip)
}

pub fn generate_session(cfg: &PhantomConfig, spec: &SessionSpec) -> Result<SyntheticSession> {
    if spec.n_biopsies == 0 {
        return Err(Error::Invalid("a session needs at least one biopsy".into()));
    }
    if !(spec.aim_sigma_mm >= 0.0) {
        return Err(Error::Invalid("aim sigma must be non-negative".into()));
    }
    let ph = Phantom::new(cfg)?;
    let grid = ph.planning_grid();
    let center = ph.geometry().center();
    let mut motion_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ MOTION_STREAM);
    let mut aim_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ AIM_STREAM);
    let labels = TargetLabel::all();

    let mut moving = Vec::with_capacity(spec.n_biopsies);
    let mut truths = Vec::with_capacity(spec.n_biopsies);
    let mut records = Vec::with_capacity(spec.n_biopsies);
    for b in 0..spec.n_biopsies {
        let t_true = random_motion(&mut motion_rng, spec.motion_mm, spec.motion_deg, center);
        let noise_seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(b as u64 + 1);
        let (vol, gt) = ph.moving(&t_true, noise_seed)?;

        let label = labels[b % labels.len()];
        let aimed = aim_needle(&grid, label, spec.aim_sigma_mm, &mut aim_rng);
        let to_mov = t_true.inverse();
        let seg = Segment::new(to_mov.apply_point(aimed.entry), to_mov.apply_point(aimed.tip));

        records.push(BiopsyRecord {
            index: (b + 1) as u32,
            intended_target: label,
            needle: NeedleSegment::new(seg, volume_id(b + 1))?,
        });
        moving.push(vol);
        truths.push(gt);
    }
    let session = Session {
        patient_id: format!("phantom-{}", spec.seed),
        reference_volume_id: "reference".into(),
        chronological_rank: 1,
        records,
    };
    Ok(SyntheticSession { reference: ph.reference(), moving, session, grid, truths })
}
