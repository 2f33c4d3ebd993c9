//! C ABI over `trusmap`.
//!
//! Objects cross the boundary as opaque handles created by `trus_*_new`/`read`
//! functions and released with the matching `trus_*_free`. Every fallible call
//! returns a [`TrusStatus`]; on failure the message is available from
//! [`trus_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::Vector3;
use trusmap::analytics::{chi2_2x2, chi2_sf_df1};
use trusmap::fiducial::{tre, FiducialPair};
use trusmap::io::{read_mha, write_mha};
use trusmap::phantom::{Phantom, PhantomConfig};
use trusmap::registration::{register, RegistrationConfig, RegistrationResult};
use trusmap::transform::{RigidTransform, TransformParams};
use trusmap::volume::{Geometry, IntensityType, Volume3};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Registration = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Voxel storage type of a volume.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrusIntensityType {
    U8 = 0,
    I16 = 1,
    F32 = 2,
}

/// A 3-D scalar volume with LPS geometry.
pub struct TrusVolume(Volume3);

/// A synthetic gland phantom with fiducials.
pub struct TrusPhantom(Phantom);

/// Outcome of a rigid registration.
pub struct TrusRegistration(RegistrationResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let s = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

struct Fail(TrusStatus, String);

impl Fail {
    fn new(status: TrusStatus, msg: impl ToString) -> Self {
        Fail(status, msg.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail::new(TrusStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TrusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrusStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside trusmap");
            TrusStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or_else(|| null(name))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::new(TrusStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn vec3_arg(p: *const f64, name: &str) -> Result<Vector3<f64>, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = unsafe { std::slice::from_raw_parts(p, 3) };
    Ok(Vector3::new(s[0], s[1], s[2]))
}

unsafe fn write3(p: *mut f64, v: Vector3<f64>, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    unsafe { std::slice::from_raw_parts_mut(p, 3) }.copy_from_slice(v.as_slice());
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn trus_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn trus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a MetaImage (`.mha` or `.mhd`) file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn trus_volume_read_mha(path: *const c_char, out_volume: *mut *mut TrusVolume) -> TrusStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path")? };
        let out_volume = unsafe { out(out_volume, "out_volume")? };
        let v = read_mha(path).map_err(|e| {
            let status = if matches!(e, trusmap::io::mha::MhaError::Io { .. }) { TrusStatus::Io } else { TrusStatus::Parse };
            Fail::new(status, e)
        })?;
        *out_volume = boxed(TrusVolume(v));
        Ok(())
    })
}

/// Writes a volume as MetaImage.
///
/// # Safety
/// `volume` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn trus_volume_write_mha(volume: *const TrusVolume, path: *const c_char) -> TrusStatus {
    guard(|| {
        let v = unsafe { as_ref(volume, "volume")? };
        let path = unsafe { str_arg(path, "path")? };
        write_mha(&v.0, path).map_err(|e| Fail::new(TrusStatus::Io, e))
    })
}

/// Builds a volume from `dims[0]*dims[1]*dims[2]` samples, x fastest.
/// Samples are quantized to `ty`. The direction is the identity.
///
/// # Safety
/// `dims`, `spacing` and `origin` must point to 3 values, `data` to `len`.
#[no_mangle]
pub unsafe extern "C" fn trus_volume_new(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    data: *const f32,
    len: usize,
    ty: TrusIntensityType,
    out_volume: *mut *mut TrusVolume,
) -> TrusStatus {
    guard(|| {
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = unsafe { std::slice::from_raw_parts(dims, 3) };
        let s = unsafe { vec3_arg(spacing, "spacing")? };
        let o = unsafe { vec3_arg(origin, "origin")? };
        if data.is_null() {
            return Err(null("data"));
        }
        let out_volume = unsafe { out(out_volume, "out_volume")? };
        let ty = match ty {
            TrusIntensityType::U8 => IntensityType::U8,
            TrusIntensityType::I16 => IntensityType::I16,
            TrusIntensityType::F32 => IntensityType::F32,
        };
        let samples = unsafe { std::slice::from_raw_parts(data, len) }.iter().map(|&x| ty.quantize(x)).collect();
        let g = Geometry::new([d[0], d[1], d[2]], [s.x, s.y, s.z], [o.x, o.y, o.z]);
        let v = Volume3::new(g, samples, ty).map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        *out_volume = boxed(TrusVolume(v));
        Ok(())
    })
}

/// Releases a volume. NULL is ignored.
///
/// # Safety
/// `volume` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trus_volume_free(volume: *mut TrusVolume) {
    if !volume.is_null() {
        drop(unsafe { Box::from_raw(volume) });
    }
}

/// Grid size, spacing (mm) and origin (mm) of a volume.
/// Any output pointer may be NULL.
///
/// # Safety
/// Non-null outputs must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn trus_volume_geometry(
    volume: *const TrusVolume,
    out_dims: *mut usize,
    out_spacing: *mut f64,
    out_origin: *mut f64,
) -> TrusStatus {
    guard(|| {
        let v = unsafe { as_ref(volume, "volume")? };
        if !out_dims.is_null() {
            unsafe { std::slice::from_raw_parts_mut(out_dims, 3) }.copy_from_slice(&v.0.dims());
        }
        if !out_spacing.is_null() {
            unsafe { write3(out_spacing, v.0.spacing(), "out_spacing")? };
        }
        if !out_origin.is_null() {
            unsafe { write3(out_origin, v.0.origin(), "out_origin")? };
        }
        Ok(())
    })
}

/// Borrowed view of the samples, x fastest. Valid while the volume lives.
///
/// # Safety
/// `out_data` and `out_len` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn trus_volume_data(volume: *const TrusVolume, out_data: *mut *const f32, out_len: *mut usize) -> TrusStatus {
    guard(|| {
        let v = unsafe { as_ref(volume, "volume")? };
        let d = unsafe { out(out_data, "out_data")? };
        let n = unsafe { out(out_len, "out_len")? };
        *d = v.0.data().as_ptr();
        *n = v.0.data().len();
        Ok(())
    })
}

/// Creates a phantom. `config_json` may be NULL for the defaults; otherwise
/// it is a JSON object whose missing fields take default values.
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out_phantom` valid.
#[no_mangle]
pub unsafe extern "C" fn trus_phantom_new(config_json: *const c_char, out_phantom: *mut *mut TrusPhantom) -> TrusStatus {
    guard(|| {
        let cfg: PhantomConfig = if config_json.is_null() {
            PhantomConfig::default()
        } else {
            let s = unsafe { str_arg(config_json, "config_json")? };
            serde_json::from_str(s).map_err(|e| Fail::new(TrusStatus::Parse, e))?
        };
        let out_phantom = unsafe { out(out_phantom, "out_phantom")? };
        let ph = Phantom::new(&cfg).map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        *out_phantom = boxed(TrusPhantom(ph));
        Ok(())
    })
}

/// Releases a phantom. NULL is ignored.
///
/// # Safety
/// `phantom` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trus_phantom_free(phantom: *mut TrusPhantom) {
    if !phantom.is_null() {
        drop(unsafe { Box::from_raw(phantom) });
    }
}

/// Renders the reference volume.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn trus_phantom_reference(phantom: *const TrusPhantom, out_volume: *mut *mut TrusVolume) -> TrusStatus {
    guard(|| {
        let ph = unsafe { as_ref(phantom, "phantom")? };
        let out_volume = unsafe { out(out_volume, "out_volume")? };
        *out_volume = boxed(TrusVolume(ph.0.reference()));
        Ok(())
    })
}

/// Renders a moving volume related to the reference by the rigid map with
/// parameters `params` = (tx, ty, tz, rx, ry, rz) (mm, radians) about the
/// grid centre. Motions beyond the plausibility bounds are rejected.
///
/// # Safety
/// `params` must point to 6 values; `out_volume` must be valid.
#[no_mangle]
pub unsafe extern "C" fn trus_phantom_moving(
    phantom: *const TrusPhantom,
    params: *const f64,
    noise_seed: u64,
    out_volume: *mut *mut TrusVolume,
) -> TrusStatus {
    guard(|| {
        let ph = unsafe { as_ref(phantom, "phantom")? };
        if params.is_null() {
            return Err(null("params"));
        }
        let p = unsafe { std::slice::from_raw_parts(params, 6) };
        let out_volume = unsafe { out(out_volume, "out_volume")? };
        let t = RigidTransform::from_params(&TransformParams::new([p[0], p[1], p[2]], [p[3], p[4], p[5]]), ph.0.geometry().center());
        let (v, _) = ph.0.moving(&t, noise_seed).map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        *out_volume = boxed(TrusVolume(v));
        Ok(())
    })
}

/// Copies fiducial centres (reference frame, mm) as x,y,z triples into
/// `out_xyz`, which holds `capacity` points. `out_count` always receives the
/// number of fiducials; a short buffer yields `BufferTooSmall`.
///
/// # Safety
/// `out_xyz` must hold `3 * capacity` doubles (may be NULL if capacity is 0).
#[no_mangle]
pub unsafe extern "C" fn trus_phantom_fiducials(
    phantom: *const TrusPhantom,
    out_xyz: *mut f64,
    capacity: usize,
    out_count: *mut usize,
) -> TrusStatus {
    guard(|| {
        let ph = unsafe { as_ref(phantom, "phantom")? };
        let count = unsafe { out(out_count, "out_count")? };
        let f = ph.0.fiducials();
        *count = f.len();
        if capacity < f.len() {
            return Err(Fail::new(TrusStatus::BufferTooSmall, format!("{} fiducials, capacity {capacity}", f.len())));
        }
        if out_xyz.is_null() {
            return Err(null("out_xyz"));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(out_xyz, 3 * f.len()) };
        for (chunk, p) in dst.chunks_exact_mut(3).zip(f) {
            chunk.copy_from_slice(p.as_slice());
        }
        Ok(())
    })
}

/// Registers `moving` onto `reference`. `config_json` may be NULL for the
/// defaults. An unsuccessful but completed registration returns `Ok`; check
/// [`trus_registration_success`]. Errors such as insufficient overlap return
/// `Registration`.
///
/// # Safety
/// Handles must come from this library; `out_result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn trus_register(
    reference: *const TrusVolume,
    moving: *const TrusVolume,
    config_json: *const c_char,
    out_result: *mut *mut TrusRegistration,
) -> TrusStatus {
    guard(|| {
        let r = unsafe { as_ref(reference, "reference")? };
        let m = unsafe { as_ref(moving, "moving")? };
        let cfg: RegistrationConfig = if config_json.is_null() {
            RegistrationConfig::default()
        } else {
            let s = unsafe { str_arg(config_json, "config_json")? };
            serde_json::from_str(s).map_err(|e| Fail::new(TrusStatus::Parse, e))?
        };
        cfg.validate().map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        let out_result = unsafe { out(out_result, "out_result")? };
        let res = register(&r.0, &m.0, &cfg).map_err(|e| Fail::new(TrusStatus::Registration, e))?;
        *out_result = boxed(TrusRegistration(res));
        Ok(())
    })
}

/// Releases a registration result. NULL is ignored.
///
/// # Safety
/// `result` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trus_registration_free(result: *mut TrusRegistration) {
    if !result.is_null() {
        drop(unsafe { Box::from_raw(result) });
    }
}

/// Whether the registration met the success criteria. False for NULL.
///
/// # Safety
/// `result` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn trus_registration_success(result: *const TrusRegistration) -> bool {
    unsafe { result.as_ref() }.is_some_and(|r| r.0.success)
}

/// Final similarity score, overlap fraction, iteration count and wall time.
/// Any output pointer may be NULL.
///
/// # Safety
/// Non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn trus_registration_metrics(
    result: *const TrusRegistration,
    out_score: *mut f64,
    out_overlap: *mut f64,
    out_iterations: *mut usize,
    out_seconds: *mut f64,
) -> TrusStatus {
    guard(|| {
        let r = &unsafe { as_ref(result, "result")? }.0;
        unsafe {
            if let Some(p) = out_score.as_mut() {
                *p = r.score;
            }
            if let Some(p) = out_overlap.as_mut() {
                *p = r.overlap_fraction;
            }
            if let Some(p) = out_iterations.as_mut() {
                *p = r.iterations;
            }
            if let Some(p) = out_seconds.as_mut() {
                *p = r.elapsed_seconds;
            }
        }
        Ok(())
    })
}

/// The moving-to-reference map as a row-major 3x3 rotation `R` and an offset
/// `o`, so that `p_ref = R p_mov + o`.
///
/// # Safety
/// `out_rotation` must hold 9 doubles and `out_offset` 3.
#[no_mangle]
pub unsafe extern "C" fn trus_registration_matrix(
    result: *const TrusRegistration,
    out_rotation: *mut f64,
    out_offset: *mut f64,
) -> TrusStatus {
    guard(|| {
        let t = &unsafe { as_ref(result, "result")? }.0.transform;
        if out_rotation.is_null() {
            return Err(null("out_rotation"));
        }
        let rot = unsafe { std::slice::from_raw_parts_mut(out_rotation, 9) };
        let m = t.rotation();
        for i in 0..3 {
            for j in 0..3 {
                rot[3 * i + j] = m[(i, j)];
            }
        }
        unsafe { write3(out_offset, t.offset(), "out_offset") }
    })
}

/// Maps a point from the moving frame into the reference frame.
///
/// # Safety
/// `point` and `out_point` must point to 3 doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn trus_registration_apply_point(
    result: *const TrusRegistration,
    point: *const f64,
    out_point: *mut f64,
) -> TrusStatus {
    guard(|| {
        let r = unsafe { as_ref(result, "result")? };
        let p = unsafe { vec3_arg(point, "point")? };
        unsafe { write3(out_point, r.0.transform.apply_point(p), "out_point") }
    })
}

/// Target registration error of a result over `n` fiducial pairs given as
/// x,y,z triples: mean and max of `|T(p_mov) - p_ref|` in mm.
///
/// # Safety
/// `ref_xyz` and `mov_xyz` must hold `3 * n` doubles; outputs may be NULL.
#[no_mangle]
pub unsafe extern "C" fn trus_registration_tre(
    result: *const TrusRegistration,
    ref_xyz: *const f64,
    mov_xyz: *const f64,
    n: usize,
    out_mean_mm: *mut f64,
    out_max_mm: *mut f64,
) -> TrusStatus {
    guard(|| {
        let r = unsafe { as_ref(result, "result")? };
        if ref_xyz.is_null() || mov_xyz.is_null() {
            return Err(null("fiducial coordinates"));
        }
        let a = unsafe { std::slice::from_raw_parts(ref_xyz, 3 * n) };
        let b = unsafe { std::slice::from_raw_parts(mov_xyz, 3 * n) };
        let pairs: Vec<FiducialPair> = a
            .chunks_exact(3)
            .zip(b.chunks_exact(3))
            .enumerate()
            .map(|(i, (p, q))| FiducialPair {
                id: format!("f{}", i + 1),
                p_ref: Vector3::new(p[0], p[1], p[2]),
                p_mov: Vector3::new(q[0], q[1], q[2]),
            })
            .collect();
        let s = tre(&pairs, &r.0.transform).map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        unsafe {
            if let Some(p) = out_mean_mm.as_mut() {
                *p = s.mean_mm;
            }
            if let Some(p) = out_max_mm.as_mut() {
                *p = s.max_mm;
            }
        }
        Ok(())
    })
}

/// Pearson chi-square of the 2x2 table [[a, b], [c, d]] without continuity
/// correction, and optionally its df = 1 p-value.
///
/// # Safety
/// `out_chi2` must be valid; `out_p` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn trus_chi2_2x2(a: u64, b: u64, c: u64, d: u64, out_chi2: *mut f64, out_p: *mut f64) -> TrusStatus {
    guard(|| {
        let o = unsafe { out(out_chi2, "out_chi2")? };
        let x = chi2_2x2(a, b, c, d).map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        *o = x;
        if let Some(p) = unsafe { out_p.as_mut() } {
            *p = chi2_sf_df1(x).map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        }
        Ok(())
    })
}

/// Survival function of the chi-square distribution with one degree of freedom.
///
/// # Safety
/// `out_p` must be valid.
#[no_mangle]
pub unsafe extern "C" fn trus_chi2_sf_df1(x: f64, out_p: *mut f64) -> TrusStatus {
    guard(|| {
        let o = unsafe { out(out_p, "out_p")? };
        *o = chi2_sf_df1(x).map_err(|e| Fail::new(TrusStatus::InvalidArgument, e))?;
        Ok(())
    })
}
