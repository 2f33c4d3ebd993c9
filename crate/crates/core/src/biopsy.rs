//! Biopsy sessions and mapping of annotated needle segments into the reference frame.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::registration::RegistrationResult;
use crate::sector::{Segment, SectorGrid, TargetLabel};
use crate::transform::RigidTransform;

/// Typical biopsy core length band in mm; lengths outside only produce a warning.
pub const TYPICAL_CORE_MM: (f64, f64) = (15.0, 25.0);

/// A needle annotated in the world frame of its own volume.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedleSegment {
    pub segment: Segment,
    pub volume_id: String,
}

impl NeedleSegment {
    pub fn new(segment: Segment, volume_id: impl Into<String>) -> Result<Self> {
        let len = segment.length();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::Invalid(format!("needle segment must have positive finite length, got {len}")));
        }
        if len < TYPICAL_CORE_MM.0 || len > TYPICAL_CORE_MM.1 {
            log::warn!("needle length {len:.1} mm is outside the typical core band 15-25 mm");
        }
        Ok(Self { segment, volume_id: volume_id.into() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiopsyRecord {
    /// Chronological order within the session, starting at 1.
    pub index: u32,
    pub intended_target: TargetLabel,
    pub needle: NeedleSegment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub patient_id: String,
    pub reference_volume_id: String,
    pub chronological_rank: u32,
    pub records: Vec<BiopsyRecord>,
}

impl Session {
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Empty("session has no biopsy records"));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.index) {
                return Err(Error::Invalid(format!("duplicate biopsy index {} in session {}", r.index, self.patient_id)));
            }
        }
        Ok(())
    }
}

/// The parts of a registration that mapping needs, tied to the moving volume it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeRegistration {
    pub volume_id: String,
    pub transform: RigidTransform,
    pub success: bool,
    /// `None` when the transform was supplied without registration metrics.
    pub score: Option<f64>,
}

impl VolumeRegistration {
    pub fn from_result(volume_id: impl Into<String>, r: &RegistrationResult) -> Self {
        Self { volume_id: volume_id.into(), transform: r.transform, success: r.success, score: Some(r.score) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappedBiopsy {
    pub record: BiopsyRecord,
    /// Present only when the registration succeeded.
    pub segment_ref: Option<Segment>,
    pub registration_success: bool,
    pub score: Option<f64>,
}

impl MappedBiopsy {
    pub fn is_mapped(&self) -> bool {
        self.segment_ref.is_some()
    }
}

/// Maps the needle of `record` into the reference frame. Failed registrations
/// yield an unmapped biopsy that downstream statistics skip.
pub fn map_biopsy(record: &BiopsyRecord, reg: &VolumeRegistration) -> Result<MappedBiopsy> {
    if record.needle.volume_id != reg.volume_id {
        return Err(Error::VolumeIdMismatch {
            record: record.needle.volume_id.clone(),
            registration: reg.volume_id.clone(),
        });
    }
    let segment_ref = reg.success.then(|| {
        let s = &record.needle.segment;
        Segment::new(reg.transform.apply_point(s.entry), reg.transform.apply_point(s.tip))
    });
    Ok(MappedBiopsy { record: record.clone(), segment_ref, registration_success: reg.success, score: reg.score })
}

/// Element-wise [`map_biopsy`], keeping the chronological order of the records.
pub fn map_session(session: &Session, regs: &[VolumeRegistration]) -> Result<Vec<MappedBiopsy>> {
    if session.records.len() != regs.len() {
        return Err(Error::CountMismatch { records: session.records.len(), registrations: regs.len() });
    }
    let mut records: Vec<(&BiopsyRecord, &VolumeRegistration)> = session.records.iter().zip(regs).collect();
    records.sort_by_key(|(r, _)| r.index);
    records.into_iter().map(|(r, g)| map_biopsy(r, g)).collect()
}

/// A session after mapping, with the planning grid of its reference volume.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedSession {
    pub patient_id: String,
    pub chronological_rank: u32,
    pub grid: SectorGrid,
    pub biopsies: Vec<MappedBiopsy>,
}

impl MappedSession {
    pub fn mapped_count(&self) -> usize {
        self.biopsies.iter().filter(|b| b.is_mapped()).count()
    }
}
