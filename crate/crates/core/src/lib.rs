//! Rigid registration of 3D transrectal ultrasound volumes, biopsy mapping
//! into a reference frame, sector-based targeting analytics and a synthetic
//! phantom generator.

pub mod analytics;
pub mod biopsy;
pub mod cli;
pub mod error;
pub mod fiducial;
pub mod io;
pub mod phantom;
pub mod registration;
pub mod sector;
pub mod transform;
pub mod volume;

pub use error::{Error, Result};
pub use registration::{register, RegistrationConfig, RegistrationError, RegistrationResult};
pub use sector::{AnalysisTarget, SectorGrid, Segment, TargetLabel};
pub use transform::{RigidTransform, TransformError, TransformParams};
pub use volume::{Geometry, IntensityType, Pyramid, Volume3, VolumeError};
