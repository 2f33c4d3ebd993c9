//! Twelve-sector coronal planning grid, segment clipping and hit testing.
//!
//! Convention: `+z` is cranial, so Base is the top third of the box and Apex
//! the bottom third. Columns run along `x` in the order Lateral-Left,
//! Parasagittal-Left, Parasagittal-Right, Lateral-Right. Each sector is the
//! prism over its coronal cell spanning the whole anterior-posterior (`y`)
//! extent of the box.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Default minimum inner length for a biopsy to count as a hit, in mm.
pub const DEFAULT_MIN_LEN_MM: f64 = 1.0;

pub const GRID_ORIENTATION: &str = "z_cranial_x_left";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Row {
    Base,
    Mid,
    Apex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Column {
    Lateral,
    Parasagittal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub fn mirrored(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

/// One of the 12 raw planning sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetLabel {
    pub row: Row,
    pub column: Column,
    pub side: Side,
}

impl TargetLabel {
    pub const fn new(row: Row, column: Column, side: Side) -> Self {
        Self { row, column, side }
    }

    /// All 12 labels in systematic-protocol order (right side first).
    pub fn all() -> [TargetLabel; 12] {
        let mut out = [TargetLabel::new(Row::Base, Column::Lateral, Side::Right); 12];
        let mut n = 0;
        for side in [Side::Right, Side::Left] {
            for row in [Row::Base, Row::Mid, Row::Apex] {
                for column in [Column::Lateral, Column::Parasagittal] {
                    out[n] = TargetLabel::new(row, column, side);
                    n += 1;
                }
            }
        }
        out
    }

    pub fn mirrored(self) -> Self {
        Self { side: self.side.mirrored(), ..self }
    }
}

fn row_code(row: Row) -> char {
    match row {
        Row::Base => 'B',
        Row::Mid => 'M',
        Row::Apex => 'A',
    }
}

impl fmt::Display for TargetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let col = match self.column {
            Column::Lateral => 'L',
            Column::Parasagittal => 'S',
        };
        write!(f, "{}{}-{}", row_code(self.row), col, self.side.code())
    }
}

impl FromStr for TargetLabel {
    type Err = Error;

    /// Parses codes such as `BL-R`, `MS-L`, `AS-R`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::UnknownLabel(s.to_string());
        let b = s.as_bytes();
        if b.len() != 4 || b[2] != b'-' {
            return Err(bad());
        }
        let row = match b[0] {
            b'B' => Row::Base,
            b'M' => Row::Mid,
            b'A' => Row::Apex,
            _ => return Err(bad()),
        };
        let column = match b[1] {
            b'L' => Column::Lateral,
            b'S' | b'P' => Column::Parasagittal,
            _ => return Err(bad()),
        };
        let side = match b[3] {
            b'L' => Side::Left,
            b'R' => Side::Right,
            _ => return Err(bad()),
        };
        Ok(TargetLabel { row, column, side })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnalysisColumn {
    Lateral,
    Parasagittal,
    /// Apex lateral and apex parasagittal merged.
    ApexFused,
}

/// Analysis target: a raw sector, or the fused apex target of one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnalysisTarget {
    pub row: Row,
    pub column: AnalysisColumn,
    pub side: Side,
}

impl From<TargetLabel> for AnalysisTarget {
    fn from(l: TargetLabel) -> Self {
        let column = match l.column {
            Column::Lateral => AnalysisColumn::Lateral,
            Column::Parasagittal => AnalysisColumn::Parasagittal,
        };
        AnalysisTarget { row: l.row, column, side: l.side }
    }
}

impl AnalysisTarget {
    pub const fn fused_apex(side: Side) -> Self {
        AnalysisTarget { row: Row::Apex, column: AnalysisColumn::ApexFused, side }
    }

    /// The ten report rows, in table order.
    pub fn report_rows() -> [AnalysisTarget; 10] {
        let t = |row, column, side| AnalysisTarget { row, column, side };
        use AnalysisColumn::*;
        [
            t(Row::Base, Lateral, Side::Right),
            t(Row::Base, Lateral, Side::Left),
            t(Row::Base, Parasagittal, Side::Right),
            t(Row::Base, Parasagittal, Side::Left),
            t(Row::Mid, Lateral, Side::Right),
            t(Row::Mid, Lateral, Side::Left),
            t(Row::Mid, Parasagittal, Side::Right),
            t(Row::Mid, Parasagittal, Side::Left),
            AnalysisTarget::fused_apex(Side::Right),
            AnalysisTarget::fused_apex(Side::Left),
        ]
    }

    /// Raw sectors that make up this target.
    pub fn constituents(&self) -> Vec<TargetLabel> {
        match self.column {
            AnalysisColumn::Lateral => vec![TargetLabel::new(self.row, Column::Lateral, self.side)],
            AnalysisColumn::Parasagittal => vec![TargetLabel::new(self.row, Column::Parasagittal, self.side)],
            AnalysisColumn::ApexFused => vec![
                TargetLabel::new(Row::Apex, Column::Lateral, self.side),
                TargetLabel::new(Row::Apex, Column::Parasagittal, self.side),
            ],
        }
    }

    /// Short target code without side: `BL`, `BS`, `ML`, `MS`, `AL`, `AS` or `AL+AS`.
    pub fn target_code(&self) -> String {
        match self.column {
            AnalysisColumn::Lateral => format!("{}L", row_code(self.row)),
            AnalysisColumn::Parasagittal => format!("{}S", row_code(self.row)),
            AnalysisColumn::ApexFused => "AL+AS".to_string(),
        }
    }
}

impl fmt::Display for AnalysisTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.target_code(), self.side.code())
    }
}

/// Merges both apex columns of a side; every other label maps to itself.
pub fn fuse_apex(label: TargetLabel) -> AnalysisTarget {
    if label.row == Row::Apex {
        AnalysisTarget::fused_apex(label.side)
    } else {
        label.into()
    }
}

/// Axis-aligned box in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn volume(&self) -> f64 {
        let e = self.max - self.min;
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Parametric interval `[t0, t1] ⊂ [0, 1]` of `a + t (b - a)` inside the closed box.
    pub fn clip_segment(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Option<(f64, f64)> {
        let d = b - a;
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for axis in 0..3 {
            let (lo, hi) = (self.min[axis], self.max[axis]);
            if d[axis] == 0.0 {
                if a[axis] < lo || a[axis] > hi {
                    return None;
                }
            } else {
                let inv = 1.0 / d[axis];
                let (mut ta, mut tb) = ((lo - a[axis]) * inv, (hi - a[axis]) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// Length of the part of segment `a→b` inside the closed box.
    pub fn clip_length(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        match self.clip_segment(a, b) {
            Some((t0, t1)) => (t1 - t0) * (b - a).norm(),
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectorGrid {
    bbox: Aabb,
    /// Increasing `z`: Apex | Mid | Base.
    row_edges: [f64; 4],
    /// Increasing `x`: Lateral-L | Parasagittal-L | Parasagittal-R | Lateral-R.
    col_edges: [f64; 5],
}

impl SectorGrid {
    /// Uniform 3 × 4 partition of the box's coronal (x, z) face.
    pub fn build(bbox: Aabb) -> Result<Self, Error> {
        let e = bbox.max - bbox.min;
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) || !e.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateBox);
        }
        let (z0, z1) = (bbox.min.z, bbox.max.z);
        let (x0, x1) = (bbox.min.x, bbox.max.x);
        let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
        let row_edges = [z0, lerp(z0, z1, 1.0 / 3.0), lerp(z0, z1, 2.0 / 3.0), z1];
        let col_edges = [x0, lerp(x0, x1, 0.25), lerp(x0, x1, 0.5), lerp(x0, x1, 0.75), x1];
        Ok(Self { bbox, row_edges, col_edges })
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    pub fn row_edges(&self) -> &[f64; 4] {
        &self.row_edges
    }

    pub fn col_edges(&self) -> &[f64; 5] {
        &self.col_edges
    }

    fn row_slot(row: Row) -> usize {
        match row {
            Row::Apex => 0,
            Row::Mid => 1,
            Row::Base => 2,
        }
    }

    fn col_slot(column: Column, side: Side) -> usize {
        match (column, side) {
            (Column::Lateral, Side::Left) => 0,
            (Column::Parasagittal, Side::Left) => 1,
            (Column::Parasagittal, Side::Right) => 2,
            (Column::Lateral, Side::Right) => 3,
        }
    }

    /// The closed prism of one sector.
    pub fn sector_box(&self, label: TargetLabel) -> Aabb {
        let r = Self::row_slot(label.row);
        let c = Self::col_slot(label.column, label.side);
        Aabb::new(
            Vector3::new(self.col_edges[c], self.bbox.min.y, self.row_edges[r]),
            Vector3::new(self.col_edges[c + 1], self.bbox.max.y, self.row_edges[r + 1]),
        )
    }

    /// Sector containing `p`, `None` outside the box. Points on shared faces
    /// go to the sector with the larger coordinate.
    pub fn locate(&self, p: &Vector3<f64>) -> Option<TargetLabel> {
        if !self.bbox.contains(p) {
            return None;
        }
        let slot = |edges: &[f64], v: f64| edges[1..edges.len() - 1].iter().filter(|&&e| v >= e).count();
        let r = slot(&self.row_edges, p.z);
        let c = slot(&self.col_edges, p.x);
        let row = [Row::Apex, Row::Mid, Row::Base][r];
        let (column, side) = [
            (Column::Lateral, Side::Left),
            (Column::Parasagittal, Side::Left),
            (Column::Parasagittal, Side::Right),
            (Column::Lateral, Side::Right),
        ][c];
        Some(TargetLabel::new(row, column, side))
    }

    /// Reflection across the mid-sagittal plane of the box.
    pub fn mirror_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(self.bbox.min.x + self.bbox.max.x - p.x, p.y, p.z)
    }

    /// Length of `seg` inside a single raw sector.
    pub fn clip_length(&self, seg: &Segment, label: TargetLabel) -> f64 {
        self.sector_box(label).clip_length(&seg.entry, &seg.tip)
    }

    /// Length of `seg` inside an analysis target; fused targets sum their sectors.
    pub fn target_length(&self, seg: &Segment, target: AnalysisTarget) -> f64 {
        target.constituents().into_iter().map(|l| self.clip_length(seg, l)).sum()
    }

    /// A hit needs a positive inner length of at least `min_len`, so a
    /// threshold of zero still rejects segments that miss entirely.
    pub fn is_hit(&self, seg: &Segment, target: AnalysisTarget, min_len: f64) -> bool {
        let len = self.target_length(seg, target);
        len > 0.0 && len >= min_len
    }

    /// Centre of a sector cell at mid AP depth.
    pub fn sector_center(&self, label: TargetLabel) -> Vector3<f64> {
        let b = self.sector_box(label);
        (b.min + b.max) / 2.0
    }
}

/// A straight line segment in world mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub entry: Vector3<f64>,
    pub tip: Vector3<f64>,
}

impl Segment {
    pub fn new(entry: Vector3<f64>, tip: Vector3<f64>) -> Self {
        Self { entry, tip }
    }

    pub fn length(&self) -> f64 {
        (self.tip - self.entry).norm()
    }
}

/// Grid JSON: `{"bbox_mm":{"x":[..],"y":[..],"z":[..]}, "orientation":"z_cranial_x_left"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFile {
    pub bbox_mm: BboxMm,
    pub orientation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BboxMm {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl GridFile {
    pub fn from_grid(grid: &SectorGrid) -> Self {
        let b = grid.bbox();
        GridFile {
            bbox_mm: BboxMm { x: [b.min.x, b.max.x], y: [b.min.y, b.max.y], z: [b.min.z, b.max.z] },
            orientation: GRID_ORIENTATION.to_string(),
        }
    }

    pub fn to_grid(&self) -> Result<SectorGrid, Error> {
        if self.orientation != GRID_ORIENTATION {
            return Err(Error::Invalid(format!("unsupported grid orientation '{}'", self.orientation)));
        }
        let b = &self.bbox_mm;
        SectorGrid::build(Aabb::new(Vector3::new(b.x[0], b.y[0], b.z[0]), Vector3::new(b.x[1], b.y[1], b.z[1])))
    }
}
