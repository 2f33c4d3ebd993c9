//! Per-target targeting statistics and the chronological learning-curve test.
//!
//! Mean inner length is reported two ways: over every planned biopsy of a
//! target (misses contribute their clip length, usually 0 mm) and over hits only.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::biopsy::{MappedBiopsy, MappedSession};
use crate::error::{Error, Result};
use crate::sector::{fuse_apex, AnalysisTarget, SectorGrid};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    n: usize,
    hits: usize,
    len_all: f64,
    len_hits: f64,
}

impl Tally {
    fn add(&mut self, o: &Tally) {
        self.n += o.n;
        self.hits += o.hits;
        self.len_all += o.len_all;
        self.len_hits += o.len_hits;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetStats {
    #[serde(serialize_with = "ser_target")]
    pub target: AnalysisTarget,
    pub n_biopsies: usize,
    pub n_hits: usize,
    /// `None` when no biopsy was planned for the target.
    pub hit_pct: Option<f64>,
    pub mean_len_all_mm: Option<f64>,
    pub mean_len_hits_mm: Option<f64>,
}

fn ser_target<S: serde::Serializer>(t: &AnalysisTarget, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&t.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub n_biopsies: usize,
    pub n_hits: usize,
    pub hit_pct: f64,
    pub mean_len_all_mm: f64,
    pub mean_len_hits_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<TargetStats>,
    pub totals: Totals,
    pub min_len_mm: f64,
}

fn stats_from(target: AnalysisTarget, t: &Tally) -> TargetStats {
    let ratio = |num: f64, den: usize| (den > 0).then(|| num / den as f64);
    TargetStats {
        target,
        n_biopsies: t.n,
        n_hits: t.hits,
        hit_pct: ratio(100.0 * t.hits as f64, t.n),
        mean_len_all_mm: ratio(t.len_all, t.n),
        mean_len_hits_mm: ratio(t.len_hits, t.hits),
    }
}

fn tally_biopsies<'a>(
    into: &mut BTreeMap<AnalysisTarget, Tally>,
    biopsies: impl IntoIterator<Item = &'a MappedBiopsy>,
    grid: &SectorGrid,
    min_len: f64,
) {
    for b in biopsies {
        let Some(seg) = &b.segment_ref else { continue };
        let target = fuse_apex(b.record.intended_target);
        let len = grid.target_length(seg, target);
        let hit = len >= min_len;
        let t = into.entry(target).or_default();
        t.n += 1;
        t.len_all += len;
        if hit {
            t.hits += 1;
            t.len_hits += len;
        }
    }
}

fn finish(tallies: &BTreeMap<AnalysisTarget, Tally>, min_len: f64) -> Result<Report> {
    let rows: Vec<TargetStats> = AnalysisTarget::report_rows()
        .iter()
        .map(|t| stats_from(*t, tallies.get(t).unwrap_or(&Tally::default())))
        .collect();
    let totals = aggregate(&rows)?;
    Ok(Report { rows, totals, min_len_mm: min_len })
}

/// Table-layout statistics for one session's mapped biopsies. Unmapped biopsies are skipped.
pub fn per_target_stats(mapped: &[MappedBiopsy], grid: &SectorGrid, min_len: f64) -> Result<Report> {
    let mut tallies = BTreeMap::new();
    tally_biopsies(&mut tallies, mapped, grid, min_len);
    finish(&tallies, min_len)
}

/// Statistics pooled over several sessions, each evaluated on its own grid.
pub fn pooled_stats(sessions: &[MappedSession], min_len: f64) -> Result<Report> {
    let mut tallies = BTreeMap::new();
    for s in sessions {
        tally_biopsies(&mut tallies, &s.biopsies, &s.grid, min_len);
    }
    finish(&tallies, min_len)
}

/// Sums counts over rows; lengths are biopsy-count-weighted means.
pub fn aggregate(rows: &[TargetStats]) -> Result<Totals> {
    let mut t = Tally::default();
    for r in rows {
        t.add(&Tally {
            n: r.n_biopsies,
            hits: r.n_hits,
            len_all: r.mean_len_all_mm.unwrap_or(0.0) * r.n_biopsies as f64,
            len_hits: r.mean_len_hits_mm.unwrap_or(0.0) * r.n_hits as f64,
        });
    }
    if t.n == 0 {
        return Err(Error::Empty("report has no mapped biopsies"));
    }
    Ok(Totals {
        n_biopsies: t.n,
        n_hits: t.hits,
        hit_pct: 100.0 * t.hits as f64 / t.n as f64,
        mean_len_all_mm: t.len_all / t.n as f64,
        mean_len_hits_mm: (t.hits > 0).then(|| t.len_hits / t.hits as f64),
    })
}

impl Report {
    /// Re-derives the totals from the rows and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let again = aggregate(&self.rows)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        let ok = again.n_biopsies == self.totals.n_biopsies
            && again.n_hits == self.totals.n_hits
            && close(again.hit_pct, self.totals.hit_pct)
            && close(again.mean_len_all_mm, self.totals.mean_len_all_mm);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid("report totals disagree with its rows".into()))
        }
    }
}

/// Pearson chi-square statistic of the 2×2 table `[[a, b], [c, d]]`, no continuity correction.
pub fn chi2_2x2(a: u64, b: u64, c: u64, d: u64) -> Result<f64> {
    chi2_2x2_with(a, b, c, d, false)
}

/// As [`chi2_2x2`], optionally with Yates' continuity correction.
pub fn chi2_2x2_with(a: u64, b: u64, c: u64, d: u64, yates: bool) -> Result<f64> {
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let margins = [a + b, c + d, a + c, b + d];
    if margins.iter().any(|&m| m == 0.0) {
        return Err(Error::ZeroMarginal);
    }
    let n = a + b + c + d;
    let mut diff = (a * d - b * c).abs();
    if yates {
        diff = (diff - n / 2.0).max(0.0);
    }
    Ok(n * diff * diff / margins.iter().product::<f64>())
}

/// Upper tail probability of a chi-square variable with one degree of freedom.
pub fn chi2_sf_df1(x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::NegativeStatistic(x));
    }
    Ok(statrs::function::erf::erfc((x / 2.0).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfCounts {
    pub n: usize,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurveResult {
    pub split_index: usize,
    pub first: HalfCounts,
    pub second: HalfCounts,
    pub rate_first: f64,
    pub rate_second: f64,
    pub chi2: f64,
    pub p_value: f64,
}

/// Compares hit rates of sessions `[0, split)` and `[split, n)`, in the given order.
pub fn learning_curve(sessions: &[MappedSession], split_index: usize, min_len: f64) -> Result<LearningCurveResult> {
    if split_index == 0 || split_index >= sessions.len() {
        return Err(Error::BadSplit { split: split_index, sessions: sessions.len() });
    }
    let count = |part: &[MappedSession]| {
        let mut h = HalfCounts { n: 0, hits: 0 };
        for s in part {
            for b in &s.biopsies {
                let Some(seg) = &b.segment_ref else { continue };
                h.n += 1;
                if s.grid.is_hit(seg, fuse_apex(b.record.intended_target), min_len) {
                    h.hits += 1;
                }
            }
        }
        h
    };
    let first = count(&sessions[..split_index]);
    let second = count(&sessions[split_index..]);
    if first.n == 0 || second.n == 0 {
        return Err(Error::Empty("a learning-curve half has no mapped biopsies"));
    }
    let (a, b) = (first.hits as u64, (first.n - first.hits) as u64);
    let (c, d) = (second.hits as u64, (second.n - second.hits) as u64);
    // all-hit or all-miss pooled data has no variation: statistic 0, p = 1
    let chi2 = match chi2_2x2(a, b, c, d) {
        Ok(x) => x,
        Err(Error::ZeroMarginal) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(LearningCurveResult {
        split_index,
        rate_first: first.hits as f64 / first.n as f64,
        rate_second: second.hits as f64 / second.n as f64,
        first,
        second,
        chi2,
        p_value: chi2_sf_df1(chi2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biopsy::{BiopsyRecord, NeedleSegment};
    use crate::sector::{Aabb, Column, Row, Segment, Side, TargetLabel};
    use nalgebra::Vector3;

    fn grid() -> SectorGrid {
        SectorGrid::build(Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(40.0, 20.0, 30.0))).unwrap()
    }

    fn biopsy(label: TargetLabel, seg: Segment) -> MappedBiopsy {
        MappedBiopsy {
            record: BiopsyRecord { index: 1, intended_target: label, needle: NeedleSegment { segment: seg, volume_id: "v".into() } },
            segment_ref: Some(seg),
            registration_success: true,
            score: Some(0.9),
        }
    }

    /// Trapezoid rule on the df=1 density, after substituting x = u² to remove the singularity.
    fn sf_by_quadrature(x: f64) -> f64 {
        // P(X > x) = 1 - ∫_0^x f(t) dt, with t = u²: ∫_0^{√x} 2u f(u²) du = ∫_0^{√x} √(2/π) e^{-u²/2} du
        let n = 200_000;
        let hi = x.sqrt();
        let h = hi / n as f64;
        let g = |u: f64| (2.0 / std::f64::consts::PI).sqrt() * (-u * u / 2.0).exp();
        let mut acc = 0.5 * (g(0.0) + g(hi));
        for i in 1..n {
            acc += g(i as f64 * h);
        }
        1.0 - acc * h
    }

    #[test]
    fn single_hit_and_miss_rows() {
        let g = grid();
        let ml_l = TargetLabel::new(Row::Mid, Column::Lateral, Side::Left);
        let seg15 = Segment::new(Vector3::new(5.0, 2.0, 12.0), Vector3::new(5.0, 17.0, 12.0));
        let r = per_target_stats(&[biopsy(ml_l, seg15)], &g, 1.0).unwrap();
        let row = r.rows.iter().find(|s| s.target == ml_l.into()).unwrap();
        assert_eq!((row.n_biopsies, row.n_hits), (1, 1));
        assert_eq!(row.hit_pct, Some(100.0));
        assert!((row.mean_len_all_mm.unwrap() - 15.0).abs() < 1e-12);
        assert_eq!(r.totals.n_biopsies, 1);

        let far = Segment::new(Vector3::new(35.0, 10.0, 25.0), Vector3::new(36.0, 10.0, 28.0));
        let r = per_target_stats(&[biopsy(ml_l, far)], &g, 1.0).unwrap();
        let row = r.rows.iter().find(|s| s.target == ml_l.into()).unwrap();
        assert_eq!((row.n_biopsies, row.n_hits, row.hit_pct), (1, 0, Some(0.0)));
        assert_eq!(row.mean_len_all_mm, Some(0.0));
        assert_eq!(row.mean_len_hits_mm, None);
    }

    #[test]
    fn unmapped_biopsies_do_not_count() {
        let g = grid();
        let l = TargetLabel::all()[0];
        let mut b = biopsy(l, Segment::new(Vector3::new(35.0, 1.0, 21.0), Vector3::new(35.0, 1.0, 29.0)));
        b.segment_ref = None;
        assert!(matches!(per_target_stats(&[b], &g, 1.0), Err(Error::Empty(_))));
    }

    #[test]
    fn table_row_totals() {
        let ns = [33, 31, 31, 32, 32, 30, 32, 31, 60, 59];
        let hits = [23, 17, 20, 21, 26, 23, 32, 28, 31, 27];
        let rows: Vec<_> = AnalysisTarget::report_rows()
            .iter()
            .zip(ns.iter().zip(hits))
            .map(|(t, (&n, h))| TargetStats {
                target: *t,
                n_biopsies: n,
                n_hits: h,
                hit_pct: Some(100.0 * h as f64 / n as f64),
                mean_len_all_mm: Some(10.0),
                mean_len_hits_mm: Some(14.0),
            })
            .collect();
        let t = aggregate(&rows).unwrap();
        assert_eq!(t.n_biopsies, 371);
        assert_eq!(t.n_hits, 248);
        assert!((t.hit_pct - 66.846).abs() < 1e-3);
        assert_eq!(t.hit_pct.round(), 67.0);
        let single = aggregate(&rows[..1]).unwrap();
        assert_eq!((single.n_biopsies, single.n_hits), (33, 23));
        assert_eq!(single.mean_len_all_mm, 10.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn chi2_closed_form_values() {
        assert_eq!(chi2_2x2(10, 10, 10, 10).unwrap(), 0.0);
        // 60 * (400 - 100)^2 / (30 * 30 * 30 * 30) = 6.6667
        assert!((chi2_2x2(20, 10, 10, 20).unwrap() - 20.0 / 3.0).abs() < 1e-3);
        assert!(matches!(chi2_2x2(0, 0, 5, 5), Err(Error::ZeroMarginal)));
        let plain = chi2_2x2(20, 10, 10, 20).unwrap();
        let yates = chi2_2x2_with(20, 10, 10, 20, true).unwrap();
        assert!(yates < plain);
    }

    #[test]
    fn chi2_symmetries() {
        let (a, b, c, d) = (104, 68, 144, 55);
        let x = chi2_2x2(a, b, c, d).unwrap();
        for y in [chi2_2x2(c, d, a, b), chi2_2x2(b, a, d, c), chi2_2x2(a, c, b, d)] {
            assert!((y.unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn sf_matches_quadrature_and_reference_values() {
        assert_eq!(chi2_sf_df1(0.0).unwrap(), 1.0);
        for x in [0.5, 3.841, 5.89, 6.635] {
            assert!((chi2_sf_df1(x).unwrap() - sf_by_quadrature(x)).abs() < 1e-7, "x = {x}");
        }
        assert!((chi2_sf_df1(5.89).unwrap() - 0.01523).abs() < 1e-4);
        assert!((chi2_sf_df1(3.841).unwrap() - 0.0500).abs() < 2e-4);
        assert!((chi2_sf_df1(6.635).unwrap() - 0.0100).abs() < 2e-4);
        assert!(chi2_sf_df1(-1.0).is_err());
        let mut last = 1.0;
        for i in 1..200 {
            let p = chi2_sf_df1(i as f64 * 0.1).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    fn session_with(rank: u32, hits: usize, misses: usize) -> MappedSession {
        let g = grid();
        let l = TargetLabel::new(Row::Base, Column::Lateral, Side::Right);
        let hit = Segment::new(Vector3::new(35.0, 5.0, 21.0), Vector3::new(35.0, 15.0, 29.0));
        let miss = Segment::new(Vector3::new(5.0, 5.0, 1.0), Vector3::new(5.0, 15.0, 9.0));
        let biopsies = std::iter::repeat_n(hit, hits).chain(std::iter::repeat_n(miss, misses)).map(|s| biopsy(l, s)).collect();
        MappedSession { patient_id: format!("p{rank}"), chronological_rank: rank, grid: g, biopsies }
    }

    #[test]
    fn learning_curve_basics() {
        let same = vec![session_with(1, 6, 4), session_with(2, 6, 4)];
        let r = learning_curve(&same, 1, 1.0).unwrap();
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.p_value, 1.0);

        let a = vec![session_with(1, 3, 7), session_with(2, 9, 1)];
        let b = vec![session_with(1, 9, 1), session_with(2, 3, 7)];
        let ra = learning_curve(&a, 1, 1.0).unwrap();
        let rb = learning_curve(&b, 1, 1.0).unwrap();
        assert!((ra.chi2 - rb.chi2).abs() < 1e-12 && (ra.p_value - rb.p_value).abs() < 1e-12);
        assert!(ra.rate_second > ra.rate_first);

        assert!(matches!(learning_curve(&a, 0, 1.0), Err(Error::BadSplit { .. })));
        assert!(matches!(learning_curve(&a, 2, 1.0), Err(Error::BadSplit { .. })));
        let empty = vec![session_with(1, 0, 0), session_with(2, 3, 3)];
        assert!(learning_curve(&empty, 1, 1.0).is_err());
    }

    #[test]
    fn stats_are_order_independent() {
        let g = grid();
        let labels = TargetLabel::all();
        let mut items: Vec<_> = (0..40)
            .map(|i| {
                let l = labels[i % 12];
                let c = g.sector_center(labels[(i * 7) % 12]);
                biopsy(l, Segment::new(c - Vector3::new(0.0, 4.0, 2.0), c + Vector3::new(0.0, 4.0, 2.0)))
            })
            .collect();
        let r1 = per_target_stats(&items, &g, 1.0).unwrap();
        items.reverse();
        items.swap(3, 17);
        let r2 = per_target_stats(&items, &g, 1.0).unwrap();
        assert_eq!(r1.rows.iter().map(|r| (r.n_biopsies, r.n_hits)).collect::<Vec<_>>(), r2.rows.iter().map(|r| (r.n_biopsies, r.n_hits)).collect::<Vec<_>>());
        r1.check_consistency().unwrap();
    }
}
