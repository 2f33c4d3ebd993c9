//! Scalar 3D volumes with world geometry, trilinear sampling and Gaussian pyramids.
//!
//! World coordinates are millimetres in the LPS convention. The voxel model is
//! node-centred: `origin` is the world position of the centre of voxel `(0,0,0)`
//! and voxel `(i,j,k)` sits at `origin + direction * (idx ∘ spacing)`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

/// Tolerance on `|det(direction)| - 1` and on `DᵀD - I`.
const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must all be >= 2, got {0:?}")]
    BadDims([usize; 3]),
    #[error("spacing must be positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("direction matrix is not orthonormal")]
    BadDirection,
    #[error("data length {got} does not match dims product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("downsampling factor must be >= 2, got {0}")]
    BadFactor(usize),
    #[error("pyramid with {levels} levels would shrink {dims:?} below 8 voxels on some axis")]
    PyramidTooDeep { levels: usize, dims: [usize; 3] },
    #[error("pyramid needs at least one level")]
    NoLevels,
}

/// Storage type of the voxel intensities on disk. Arithmetic always runs in `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntensityType {
    U8,
    I16,
    F32,
}

impl IntensityType {
    pub fn byte_size(self) -> usize {
        match self {
            IntensityType::U8 => 1,
            IntensityType::I16 => 2,
            IntensityType::F32 => 4,
        }
    }

    /// Rounds and saturates `v` into the representable range of the type.
    pub fn quantize(self, v: f32) -> f32 {
        match self {
            IntensityType::U8 => v.round().clamp(0.0, 255.0),
            IntensityType::I16 => v.round().clamp(i16::MIN as f32, i16::MAX as f32),
            IntensityType::F32 => v,
        }
    }
}

/// Physical placement of a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: Vector3<f64>,
    pub origin: Vector3<f64>,
    /// Column `a` holds the world direction cosines of voxel axis `a`.
    pub direction: Matrix3<f64>,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Self {
        Self {
            dims,
            spacing: Vector3::from(spacing),
            origin: Vector3::from(origin),
            direction: Matrix3::identity(),
        }
    }

    pub fn with_direction(mut self, direction: Matrix3<f64>) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(VolumeError::BadDims(self.dims));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::BadSpacing(self.spacing.into()));
        }
        let d = &self.direction;
        let gram_err = (d.transpose() * d - Matrix3::identity()).abs().max();
        if !(gram_err <= ORTHONORMAL_TOL) || !((d.determinant().abs() - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(VolumeError::BadDirection);
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear index for x-fastest storage.
    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn index_to_world(&self, idx: Vector3<f64>) -> Vector3<f64> {
        self.origin + self.direction * idx.component_mul(&self.spacing)
    }

    pub fn world_to_index(&self, p: Vector3<f64>) -> Vector3<f64> {
        // direction is orthonormal, so its inverse is its transpose
        (self.direction.transpose() * (p - self.origin)).component_div(&self.spacing)
    }

    /// Affine map `world = m * idx + origin` as `(m, origin)`.
    pub fn index_to_world_affine(&self) -> (Matrix3<f64>, Vector3<f64>) {
        (self.direction * Matrix3::from_diagonal(&self.spacing), self.origin)
    }

    /// Affine map `idx = m * world + b` as `(m, b)`.
    pub fn world_to_index_affine(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let inv_s = Matrix3::from_diagonal(&self.spacing.map(|s| 1.0 / s));
        let m = inv_s * self.direction.transpose();
        (m, -(m * self.origin))
    }

    /// World position of the grid centre.
    pub fn center(&self) -> Vector3<f64> {
        let mid = Vector3::new(
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        );
        self.index_to_world(mid)
    }

    /// Distance between first and last voxel centres along each axis.
    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(
            (self.dims[0] - 1) as f64 * self.spacing.x,
            (self.dims[1] - 1) as f64 * self.spacing.y,
            (self.dims[2] - 1) as f64 * self.spacing.z,
        )
    }
}

/// A 3D scalar grid with physical geometry. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    geometry: Geometry,
    data: Vec<f32>,
    intensity_type: IntensityType,
}

impl Volume3 {
    pub fn new(geometry: Geometry, data: Vec<f32>, intensity_type: IntensityType) -> Result<Self, VolumeError> {
        geometry.validate()?;
        let expected = geometry.voxel_count();
        if data.len() != expected {
            return Err(VolumeError::DataLength { expected, got: data.len() });
        }
        Ok(Self { geometry, data, intensity_type })
    }

    /// Builds a volume by evaluating `f(i, j, k)` at every voxel, z-slices in parallel.
    pub fn from_fn<F>(geometry: Geometry, intensity_type: IntensityType, f: F) -> Result<Self, VolumeError>
    where
        F: Fn(usize, usize, usize) -> f32 + Sync,
    {
        geometry.validate()?;
        let [nx, ny, _] = geometry.dims;
        let mut data = vec![0.0f32; geometry.voxel_count()];
        data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slice)| {
            for j in 0..ny {
                for i in 0..nx {
                    slice[i + nx * j] = f(i, j, k);
                }
            }
        });
        Self::new(geometry, data, intensity_type)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> Vector3<f64> {
        self.geometry.spacing
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.geometry.origin
    }

    pub fn direction(&self) -> &Matrix3<f64> {
        &self.geometry.direction
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn intensity_type(&self) -> IntensityType {
        self.intensity_type
    }

    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.linear(i, j, k)]
    }

    pub fn index_to_world(&self, idx: Vector3<f64>) -> Vector3<f64> {
        self.geometry.index_to_world(idx)
    }

    pub fn world_to_index(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.geometry.world_to_index(p)
    }

    /// Trilinear interpolation at world point `p`; `None` outside `[0, dims-1]³`.
    pub fn sample_trilinear(&self, p: Vector3<f64>) -> Option<f32> {
        let idx = self.world_to_index(p);
        self.sample_index(idx.x, idx.y, idx.z)
    }

    /// Trilinear interpolation at a fractional voxel index.
    #[inline]
    pub fn sample_index(&self, x: f64, y: f64, z: f64) -> Option<f32> {
        let [nx, ny, nz] = self.geometry.dims;
        let (mx, my, mz) = ((nx - 1) as f64, (ny - 1) as f64, (nz - 1) as f64);
        if !(x >= 0.0 && x <= mx && y >= 0.0 && y <= my && z >= 0.0 && z <= mz) {
            return None;
        }
        // clamp the base so the upper neighbour exists on the last plane
        let i0 = (x.floor() as usize).min(nx - 2);
        let j0 = (y.floor() as usize).min(ny - 2);
        let k0 = (z.floor() as usize).min(nz - 2);
        let fx = (x - i0 as f64) as f32;
        let fy = (y - j0 as f64) as f32;
        let fz = (z - k0 as f64) as f32;

        let sx = 1;
        let sy = nx;
        let sz = nx * ny;
        let base = i0 + nx * (j0 + ny * k0);
        let d = &self.data;
        let c000 = d[base];
        let c100 = d[base + sx];
        let c010 = d[base + sy];
        let c110 = d[base + sy + sx];
        let c001 = d[base + sz];
        let c101 = d[base + sz + sx];
        let c011 = d[base + sz + sy];
        let c111 = d[base + sz + sy + sx];

        // exact at nodes: each lerp reproduces its endpoint when the weight is 0 or 1
        let lerp = |a: f32, b: f32, t: f32| {
            if t == 0.0 {
                a
            } else if t == 1.0 {
                b
            } else {
                a + (b - a) * t
            }
        };
        let c00 = lerp(c000, c100, fx);
        let c10 = lerp(c010, c110, fx);
        let c01 = lerp(c001, c101, fx);
        let c11 = lerp(c011, c111, fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        Some(lerp(c0, c1, fz))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Intensity-weighted centroid in world coordinates.
    pub fn centroid(&self) -> Vector3<f64> {
        let [nx, ny, nz] = self.geometry.dims;
        let mut acc = Vector3::zeros();
        let mut total = 0.0;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let w = self.voxel(i, j, k) as f64;
                    acc += w * Vector3::new(i as f64, j as f64, k as f64);
                    total += w;
                }
            }
        }
        self.index_to_world(acc / total)
    }

    /// Gaussian smoothing (σ = factor/2 voxels, truncated at 3σ, clamped edges)
    /// followed by decimation. Voxel `(0,0,0)` keeps its world position.
    pub fn gaussian_downsample(&self, factor: usize) -> Result<Volume3, VolumeError> {
        if factor < 2 {
            return Err(VolumeError::BadFactor(factor));
        }
        let kernel = gaussian_kernel(0.5 * factor as f64);
        let [nx, ny, nz] = self.geometry.dims;
        let out_dims = [nx.div_ceil(factor), ny.div_ceil(factor), nz.div_ceil(factor)];

        // Smoothing along an axis only matters at the retained positions of that
        // axis, so each pass also decimates.
        let pass_x = convolve_decimate(&self.data, [nx, ny, nz], 0, &kernel, factor);
        let pass_y = convolve_decimate(&pass_x, [out_dims[0], ny, nz], 1, &kernel, factor);
        let pass_z = convolve_decimate(&pass_y, [out_dims[0], out_dims[1], nz], 2, &kernel, factor);

        let geometry = Geometry {
            dims: out_dims,
            spacing: self.geometry.spacing * factor as f64,
            origin: self.geometry.origin,
            direction: self.geometry.direction,
        };
        Volume3::new(geometry, pass_z, IntensityType::F32)
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| (w / sum) as f32).collect()
}

/// Convolves `src` (shape `dims`) along `axis` with a clamped-edge kernel and
/// keeps every `factor`-th sample on that axis.
fn convolve_decimate(src: &[f32], dims: [usize; 3], axis: usize, kernel: &[f32], factor: usize) -> Vec<f32> {
    let radius = (kernel.len() / 2) as isize;
    let n_axis = dims[axis];
    let mut out_dims = dims;
    out_dims[axis] = n_axis.div_ceil(factor);
    let [ox, oy, _] = out_dims;
    let strides = [1, dims[0], dims[0] * dims[1]];
    let stride = strides[axis];

    let mut out = vec![0.0f32; out_dims.iter().product()];
    out.par_chunks_mut(ox * oy).enumerate().for_each(|(k, slice)| {
        for j in 0..oy {
            for i in 0..ox {
                let mut src_idx = [i, j, k];
                let centre = src_idx[axis] * factor;
                src_idx[axis] = 0;
                let line_base = src_idx[0] * strides[0] + src_idx[1] * strides[1] + src_idx[2] * strides[2];
                let mut acc = 0.0f32;
                for (t, &w) in kernel.iter().enumerate() {
                    let pos = (centre as isize + t as isize - radius).clamp(0, n_axis as isize - 1) as usize;
                    acc += w * src[line_base + pos * stride];
                }
                slice[i + ox * j] = acc;
            }
        }
    });
    out
}

/// Multi-resolution stack, level 0 at full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Volume3>,
    factor: usize,
}

impl Pyramid {
    pub const DEFAULT_FACTOR: usize = 2;
    pub const MIN_COARSE_DIM: usize = 8;

    pub fn build(vol: &Volume3, n_levels: usize) -> Result<Self, VolumeError> {
        Self::build_with_factor(vol, n_levels, Self::DEFAULT_FACTOR)
    }

    pub fn build_with_factor(vol: &Volume3, n_levels: usize, factor: usize) -> Result<Self, VolumeError> {
        if n_levels == 0 {
            return Err(VolumeError::NoLevels);
        }
        if factor < 2 {
            return Err(VolumeError::BadFactor(factor));
        }
        let mut coarse = vol.dims();
        for _ in 1..n_levels {
            coarse = coarse.map(|d| d.div_ceil(factor));
        }
        if coarse.iter().any(|&d| d < Self::MIN_COARSE_DIM) {
            return Err(VolumeError::PyramidTooDeep { levels: n_levels, dims: vol.dims() });
        }
        let mut levels = Vec::with_capacity(n_levels);
        levels.push(vol.clone());
        for k in 1..n_levels {
            let next = levels[k - 1].gaussian_downsample(factor)?;
            levels.push(next);
        }
        Ok(Self { levels, factor })
    }

    pub fn levels(&self) -> &[Volume3] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Volume3 {
        &self.levels[k]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}
