//! On-disk formats. All coordinates are world millimetres in LPS; every JSON
//! document carries a `schema_version`.

pub mod mha;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analytics::{LearningCurveResult, Report};
use crate::biopsy::{BiopsyRecord, MappedBiopsy, MappedSession, NeedleSegment, Session};
use crate::error::{Error, Result};
use crate::fiducial::TreSummary;
use crate::phantom::PhantomConfig;
use crate::registration::RegistrationResult;
use crate::sector::{GridFile, SectorGrid, Segment};

pub use mha::{read_mha, write_mha, MhaError};

pub const SESSION_SCHEMA: &str = "trusmap.session/1";
pub const MAPPED_SCHEMA: &str = "trusmap.mapped/1";
pub const METRICS_SCHEMA: &str = "trusmap.metrics/1";
pub const REPORT_SCHEMA: &str = "trusmap.report/1";
pub const LEARNING_CURVE_SCHEMA: &str = "trusmap.learning_curve/1";
pub const TRE_SCHEMA: &str = "trusmap.tre/1";
pub const PHANTOM_SCHEMA: &str = "trusmap.phantom/1";

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Invalid(format!("schema_version '{found}', expected '{expected}'")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiopsyEntry {
    pub index: u32,
    pub intended_target: String,
    /// Moving volume path, relative to the session file.
    pub volume: String,
    pub needle_entry_mm: [f64; 3],
    pub needle_tip_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub schema_version: String,
    pub patient_id: String,
    pub chronological_rank: u32,
    /// Reference volume path, relative to the session file.
    pub reference_volume: String,
    pub grid: GridFile,
    pub biopsies: Vec<BiopsyEntry>,
}

impl SessionFile {
    /// Volume ids are the volume paths as written in the file.
    pub fn from_session(session: &Session, grid: &SectorGrid) -> Self {
        SessionFile {
            schema_version: SESSION_SCHEMA.into(),
            patient_id: session.patient_id.clone(),
            chronological_rank: session.chronological_rank,
            reference_volume: session.reference_volume_id.clone(),
            grid: GridFile::from_grid(grid),
            biopsies: session
                .records
                .iter()
                .map(|r| BiopsyEntry {
                    index: r.index,
                    intended_target: r.intended_target.to_string(),
                    volume: r.needle.volume_id.clone(),
                    needle_entry_mm: r.needle.segment.entry.into(),
                    needle_tip_mm: r.needle.segment.tip.into(),
                })
                .collect(),
        }
    }

    pub fn to_session(&self) -> Result<(Session, SectorGrid)> {
        check_schema(&self.schema_version, SESSION_SCHEMA)?;
        let grid = self.grid.to_grid()?;
        let records = self
            .biopsies
            .iter()
            .map(|b| {
                let seg = Segment::new(Vector3::from(b.needle_entry_mm), Vector3::from(b.needle_tip_mm));
                Ok(BiopsyRecord {
                    index: b.index,
                    intended_target: b.intended_target.parse()?,
                    needle: NeedleSegment::new(seg, b.volume.clone())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let session = Session {
            patient_id: self.patient_id.clone(),
            reference_volume_id: self.reference_volume.clone(),
            chronological_rank: self.chronological_rank,
            records,
        };
        session.validate()?;
        Ok((session, grid))
    }
}

/// Loads a session file and checks that every referenced volume exists.
pub fn load_session(path: impl AsRef<Path>) -> Result<(Session, SectorGrid)> {
    let path = path.as_ref();
    let file: SessionFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let all = std::iter::once(&file.reference_volume).chain(file.biopsies.iter().map(|b| &b.volume));
    for v in all {
        let p = base.join(v);
        if !p.is_file() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "volume referenced by session not found")));
        }
    }
    file.to_session()
}

/// Transform file name for a moving volume path: `<stem>.json`.
pub fn transform_name(volume: &str) -> String {
    format!("{}.json", volume_stem(volume))
}

/// Metrics file name for a moving volume path: `<stem>.metrics.json`.
pub fn metrics_name(volume: &str) -> String {
    format!("{}.metrics.json", volume_stem(volume))
}

fn volume_stem(volume: &str) -> String {
    Path::new(volume).file_stem().and_then(|s| s.to_str()).unwrap_or(volume).to_string()
}

/// Registration outcome next to a transform file. `elapsed_seconds` is the
/// only field that differs between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: String,
    pub success: bool,
    pub score: Option<f64>,
    pub iterations: usize,
    pub overlap_fraction: Option<f64>,
    pub elapsed_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MetricsFile {
    pub fn from_result(r: &RegistrationResult) -> Self {
        MetricsFile {
            schema_version: METRICS_SCHEMA.into(),
            success: r.success,
            score: Some(r.score),
            iterations: r.iterations,
            overlap_fraction: Some(r.overlap_fraction),
            elapsed_seconds: r.elapsed_seconds,
            error: None,
        }
    }

    /// Metrics for a registration that stopped with an error.
    pub fn failed(error: impl std::fmt::Display, elapsed_seconds: f64) -> Self {
        MetricsFile {
            schema_version: METRICS_SCHEMA.into(),
            success: false,
            score: None,
            iterations: 0,
            overlap_fraction: None,
            elapsed_seconds,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedEntry {
    pub index: u32,
    pub intended_target: String,
    pub volume: String,
    pub needle_entry_mm: [f64; 3],
    pub needle_tip_mm: [f64; 3],
    pub registration_success: bool,
    pub score: Option<f64>,
    /// Needle in the reference frame; absent when registration failed.
    pub entry_ref_mm: Option<[f64; 3]>,
    pub tip_ref_mm: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedFile {
    pub schema_version: String,
    pub patient_id: String,
    pub chronological_rank: u32,
    pub grid: GridFile,
    pub biopsies: Vec<MappedEntry>,
}

impl MappedFile {
    pub fn from_mapped(m: &MappedSession) -> Self {
        MappedFile {
            schema_version: MAPPED_SCHEMA.into(),
            patient_id: m.patient_id.clone(),
            chronological_rank: m.chronological_rank,
            grid: GridFile::from_grid(&m.grid),
            biopsies: m
                .biopsies
                .iter()
                .map(|b| MappedEntry {
                    index: b.record.index,
                    intended_target: b.record.intended_target.to_string(),
                    volume: b.record.needle.volume_id.clone(),
                    needle_entry_mm: b.record.needle.segment.entry.into(),
                    needle_tip_mm: b.record.needle.segment.tip.into(),
                    registration_success: b.registration_success,
                    score: b.score,
                    entry_ref_mm: b.segment_ref.map(|s| s.entry.into()),
                    tip_ref_mm: b.segment_ref.map(|s| s.tip.into()),
                })
                .collect(),
        }
    }

    pub fn to_mapped(&self) -> Result<MappedSession> {
        check_schema(&self.schema_version, MAPPED_SCHEMA)?;
        let biopsies = self
            .biopsies
            .iter()
            .map(|b| {
                let seg = Segment::new(Vector3::from(b.needle_entry_mm), Vector3::from(b.needle_tip_mm));
                let segment_ref = match (b.entry_ref_mm, b.tip_ref_mm) {
                    (Some(e), Some(t)) => Some(Segment::new(Vector3::from(e), Vector3::from(t))),
                    (None, None) => None,
                    _ => return Err(Error::Invalid(format!("biopsy {} has only one mapped endpoint", b.index))),
                };
                if segment_ref.is_some() != b.registration_success {
                    return Err(Error::Invalid(format!(
                        "biopsy {}: mapped segment must be present exactly when registration succeeded",
                        b.index
                    )));
                }
                Ok(MappedBiopsy {
                    record: BiopsyRecord {
                        index: b.index,
                        intended_target: b.intended_target.parse()?,
                        needle: NeedleSegment::new(seg, b.volume.clone())?,
                    },
                    segment_ref,
                    registration_success: b.registration_success,
                    score: b.score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MappedSession {
            patient_id: self.patient_id.clone(),
            chronological_rank: self.chronological_rank,
            grid: self.grid.to_grid()?,
            biopsies,
        })
    }
}

pub fn load_mapped(path: impl AsRef<Path>) -> Result<MappedSession> {
    read_json::<MappedFile>(path)?.to_mapped()
}

/// Reads a list file: one mapped-session path per line, relative to the list
/// file; blank lines and `#` comments are skipped.
pub fn read_path_list(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

pub const REPORT_CSV_HEADER: &str = "target,side,n,hits,hit_pct,mean_len_all_mm,mean_len_hits_mm";

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

/// Table-layout CSV: one row per analysis target then a `Sum/Average` row.
/// Percentages are whole numbers, lengths have one decimal.
pub fn report_csv(report: &Report) -> String {
    let mut out = String::new();
    out.push_str(REPORT_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.target.target_code(),
            r.target.side.code(),
            r.n_biopsies,
            r.n_hits,
            opt(r.hit_pct, 0),
            opt(r.mean_len_all_mm, 1),
            opt(r.mean_len_hits_mm, 1)
        );
    }
    let t = &report.totals;
    let _ = writeln!(
        out,
        "Sum/Average,,{},{},{:.0},{:.1},{}",
        t.n_biopsies,
        t.n_hits,
        t.hit_pct,
        t.mean_len_all_mm,
        opt(t.mean_len_hits_mm, 1)
    );
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportFile<'a> {
    pub schema_version: &'static str,
    #[serde(flatten)]
    pub report: &'a Report,
}

#[derive(Debug, Clone, Serialize)]
pub struct LearningCurveFile<'a> {
    pub schema_version: &'static str,
    #[serde(flatten)]
    pub result: &'a LearningCurveResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreFile<'a> {
    pub schema_version: &'static str,
    #[serde(flatten)]
    pub summary: &'a TreSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomFile {
    pub schema_version: String,
    #[serde(flatten)]
    pub config: PhantomConfig,
}

/// Phantom config JSON; a bare config object without `schema_version` is accepted too.
pub fn read_phantom_config(path: impl AsRef<Path>) -> Result<PhantomConfig> {
    let path = path.as_ref();
    let value: serde_json::Value = read_json(path)?;
    if let Some(v) = value.get("schema_version").and_then(|v| v.as_str()) {
        check_schema(v, PHANTOM_SCHEMA)?;
    }
    let mut value = value;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("schema_version");
    }
    serde_json::from_value(value).map_err(|e| Error::json(path, e))
}
