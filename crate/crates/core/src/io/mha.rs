//! MetaImage (`.mha` single file, `.mhd` + raw) reader and writer.
//!
//! Only uncompressed little-endian 3D images of `MET_UCHAR`, `MET_SHORT` or
//! `MET_FLOAT` are handled. `TransformMatrix` lists the direction cosines of
//! voxel axis 0, then axis 1, then axis 2; `Offset` is the world position of
//! voxel (0,0,0). Unrecognised header keys are ignored with a warning.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::volume::{Geometry, IntensityType, Volume3, VolumeError};

#[derive(Debug, Error)]
pub enum MhaError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed MetaImage header: {0}")]
    MalformedHeader(String),
    #[error("MetaImage header is missing required key {0}")]
    MissingKey(&'static str),
    #[error("unsupported MetaImage element type '{0}'")]
    UnsupportedElementType(String),
    #[error("unsupported MetaImage feature: {0}")]
    Unsupported(String),
    #[error("MetaImage data length mismatch: header implies {expected} bytes, found {found}")]
    DataLength { expected: usize, found: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MhaError + '_ {
    move |source| MhaError::Io { path: path.to_path_buf(), source }
}

const KNOWN_KEYS: &[&str] = &[
    "ObjectType",
    "NDims",
    "BinaryData",
    "BinaryDataByteOrderMSB",
    "ElementByteOrderMSB",
    "CompressedData",
    "TransformMatrix",
    "Orientation",
    "Rotation",
    "Offset",
    "Position",
    "Origin",
    "CenterOfRotation",
    "AnatomicalOrientation",
    "ElementSpacing",
    "DimSize",
    "ElementNumberOfChannels",
    "ElementType",
    "ElementDataFile",
    "HeaderSize",
];

#[derive(Debug, Default)]
struct Header {
    ndims: Option<usize>,
    dims: Option<[usize; 3]>,
    spacing: Option<[f64; 3]>,
    offset: Option<[f64; 3]>,
    matrix: Option<[f64; 9]>,
    element_type: Option<String>,
    data_file: Option<String>,
    compressed: bool,
    msb: bool,
    channels: usize,
}

fn parse_floats<const N: usize>(key: &str, value: &str) -> Result<[f64; N], MhaError> {
    let vals: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| MhaError::MalformedHeader(format!("{key} = {value}")))?;
    vals.try_into()
        .map_err(|v: Vec<f64>| MhaError::MalformedHeader(format!("{key} expects {N} values, got {}", v.len())))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, MhaError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(MhaError::MalformedHeader(format!("{key} = {value}"))),
    }
}

/// Parses header lines from `bytes`, stopping after `ElementDataFile`.
/// Returns the header and the byte offset where data begins.
fn parse_header(bytes: &[u8]) -> Result<(Header, usize), MhaError> {
    let mut h = Header { channels: 1, ..Default::default() };
    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| pos + i);
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| MhaError::MalformedHeader("non-UTF-8 header line".into()))?
            .trim();
        pos = (end + 1).min(bytes.len());
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| MhaError::MalformedHeader(format!("expected 'Key = Value', got '{line}'")))?;
        match key {
            "NDims" => {
                h.ndims = Some(value.parse().map_err(|_| MhaError::MalformedHeader(format!("NDims = {value}")))?)
            }
            "DimSize" => {
                let d = parse_floats::<3>(key, value)?;
                if d.iter().any(|&x| x < 1.0 || x.fract() != 0.0) {
                    return Err(MhaError::MalformedHeader(format!("DimSize = {value}")));
                }
                h.dims = Some(d.map(|x| x as usize));
            }
            "ElementSpacing" => h.spacing = Some(parse_floats::<3>(key, value)?),
            "Offset" | "Position" | "Origin" => h.offset = Some(parse_floats::<3>(key, value)?),
            "TransformMatrix" | "Orientation" | "Rotation" => h.matrix = Some(parse_floats::<9>(key, value)?),
            "ElementType" => h.element_type = Some(value.to_string()),
            "CompressedData" => h.compressed = parse_bool(key, value)?,
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => h.msb = parse_bool(key, value)?,
            "ElementNumberOfChannels" => {
                h.channels = value.parse().map_err(|_| MhaError::MalformedHeader(format!("{key} = {value}")))?
            }
            "ElementDataFile" => {
                h.data_file = Some(value.to_string());
                return Ok((h, pos));
            }
            k if KNOWN_KEYS.contains(&k) => {}
            other => log::warn!("ignoring unknown MetaImage header key '{other}'"),
        }
    }
    Err(MhaError::MissingKey("ElementDataFile"))
}

fn element_type(name: &str) -> Result<IntensityType, MhaError> {
    match name {
        "MET_UCHAR" => Ok(IntensityType::U8),
        "MET_SHORT" => Ok(IntensityType::I16),
        "MET_FLOAT" => Ok(IntensityType::F32),
        other => Err(MhaError::UnsupportedElementType(other.to_string())),
    }
}

fn element_name(t: IntensityType) -> &'static str {
    match t {
        IntensityType::U8 => "MET_UCHAR",
        IntensityType::I16 => "MET_SHORT",
        IntensityType::F32 => "MET_FLOAT",
    }
}

fn decode(raw: &[u8], t: IntensityType) -> Vec<f32> {
    match t {
        IntensityType::U8 => raw.iter().map(|&b| b as f32).collect(),
        IntensityType::I16 => raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32).collect(),
        IntensityType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
    }
}

fn encode(data: &[f32], t: IntensityType) -> Vec<u8> {
    match t {
        IntensityType::U8 => data.iter().map(|&v| t.quantize(v) as u8).collect(),
        IntensityType::I16 => data.iter().flat_map(|&v| (t.quantize(v) as i16).to_le_bytes()).collect(),
        IntensityType::F32 => data.iter().flat_map(|&v| v.to_le_bytes()).collect(),
    }
}

/// Reads a `.mha` or `.mhd` file.
pub fn read_mha(path: impl AsRef<Path>) -> Result<Volume3, MhaError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (h, data_start) = parse_header(&bytes)?;

    match h.ndims {
        None => return Err(MhaError::MissingKey("NDims")),
        Some(3) => {}
        Some(n) => return Err(MhaError::Unsupported(format!("NDims = {n}, only 3 is supported"))),
    }
    if h.compressed {
        return Err(MhaError::Unsupported("compressed data".into()));
    }
    if h.msb {
        return Err(MhaError::Unsupported("big-endian data".into()));
    }
    if h.channels != 1 {
        return Err(MhaError::Unsupported(format!("{} channels per element", h.channels)));
    }
    let dims = h.dims.ok_or(MhaError::MissingKey("DimSize"))?;
    let spacing = h.spacing.ok_or(MhaError::MissingKey("ElementSpacing"))?;
    let offset = h.offset.ok_or(MhaError::MissingKey("Offset"))?;
    let t = element_type(h.element_type.as_deref().ok_or(MhaError::MissingKey("ElementType"))?)?;
    let direction = match h.matrix {
        // consecutive triples are columns
        Some(m) => Matrix3::from_column_slice(&m),
        None => Matrix3::identity(),
    };

    let data_file = h.data_file.as_deref().unwrap_or_default();
    let owned;
    let raw: &[u8] = if data_file == "LOCAL" {
        &bytes[data_start..]
    } else {
        let raw_path = path.parent().unwrap_or(Path::new(".")).join(data_file);
        owned = fs::read(&raw_path).map_err(io_err(&raw_path))?;
        &owned
    };

    let expected = dims.iter().product::<usize>() * t.byte_size();
    if raw.len() != expected {
        return Err(MhaError::DataLength { expected, found: raw.len() });
    }
    let geometry = Geometry::new(dims, spacing, offset).with_direction(direction);
    Ok(Volume3::new(geometry, decode(raw, t), t)?)
}

fn header_text(vol: &Volume3, data_file: &str) -> String {
    let g = vol.geometry();
    let d = g.direction;
    let fmt3 = |v: &Vector3<f64>| format!("{} {} {}", v[0], v[1], v[2]);
    let matrix: Vec<String> = d.as_slice().iter().map(|x| x.to_string()).collect();
    format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         TransformMatrix = {}\n\
         Offset = {}\n\
         AnatomicalOrientation = RAI\n\
         ElementSpacing = {}\n\
         DimSize = {} {} {}\n\
         ElementType = {}\n\
         ElementDataFile = {}\n",
        matrix.join(" "),
        fmt3(&g.origin),
        fmt3(&g.spacing),
        g.dims[0],
        g.dims[1],
        g.dims[2],
        element_name(vol.intensity_type()),
        data_file
    )
}

/// Writes `vol`. A `.mhd` extension produces a header plus a sibling `.raw`
/// file; anything else produces a single `.mha` file.
pub fn write_mha(vol: &Volume3, path: impl AsRef<Path>) -> Result<(), MhaError> {
    let path = path.as_ref();
    let payload = encode(vol.data(), vol.intensity_type());
    let is_mhd = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
    if is_mhd {
        let raw_path = path.with_extension("raw");
        let raw_name = raw_path.file_name().and_then(|n| n.to_str()).unwrap_or("data.raw").to_string();
        fs::write(&raw_path, &payload).map_err(io_err(&raw_path))?;
        fs::write(path, header_text(vol, &raw_name)).map_err(io_err(path))
    } else {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(header_text(vol, "LOCAL").as_bytes()).map_err(io_err(path))?;
        f.write_all(&payload).map_err(io_err(path))
    }
}

/// Byte length of the header `write_mha` would emit for `vol` as a single file.
pub fn header_len(vol: &Volume3) -> usize {
    header_text(vol, "LOCAL").len()
}
