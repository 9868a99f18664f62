//! Calibrated diameters, ovality, tolerance flags and the along-length log.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{extract_roi, AcquisitionError, Frame, RigConfig};
use crate::calibration::{scale_for, CalibrationSample, CalibrationSet};
use crate::segmentation::{slice_strip, SegmentError, SlicedStrip};
use crate::texture::{assemble_patch, AnomalyBaseline, PseudoSurfacePatch};
use crate::{PerProjection, Projection};

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("d_max {d_max} < d_min {d_min}")]
    InvalidOrder { d_max: f64, d_min: f64 },
    #[error("diameters must be > 0 (d_min {d_min}, nominal {nominal})")]
    NonPositiveDiameter { d_min: f64, nominal: f64 },
    #[error("frame index {index} does not follow {last}")]
    NonMonotonicIndex { index: u64, last: u64 },
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("log csv: {0}")]
    Csv(String),
    #[error("frame {index}: {projection} view: {source}")]
    Segmentation { index: u64, projection: Projection, source: SegmentError },
    #[error("no calibration frames")]
    NoFrames,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(d_max - d_min) / d_nominal · 100`.
pub fn ovality(d_max: f64, d_min: f64, d_nominal: f64) -> Result<f64, MeasureError> {
    if d_max < d_min {
        return Err(MeasureError::InvalidOrder { d_max, d_min });
    }
    if !(d_min > 0.0) || !(d_nominal > 0.0) {
        return Err(MeasureError::NonPositiveDiameter { d_min, nominal: d_nominal });
    }
    Ok((d_max - d_min) / d_nominal * 100.0)
}

/// Default ovality ceiling: the full tolerance band relative to nominal.
pub fn default_max_ovality_pct(nominal_mm: f64, tolerance_mm: f64) -> f64 {
    2.0 * tolerance_mm / nominal_mm * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    OverTolerance,
    UnderTolerance,
    OvalityExceeded,
    SparseData,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::OverTolerance, Flag::UnderTolerance, Flag::OvalityExceeded, Flag::SparseData];

    pub fn token(self) -> &'static str {
        match self {
            Flag::OverTolerance => "OverTolerance",
            Flag::UnderTolerance => "UnderTolerance",
            Flag::OvalityExceeded => "OvalityExceeded",
            Flag::SparseData => "SparseData",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Flag {
    type Err = MeasureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Flag::ALL.into_iter().find(|f| f.token() == s).ok_or_else(|| MeasureError::Csv(format!("unknown flag {s:?}")))
    }
}

pub type Flags = BTreeSet<Flag>;

pub fn format_flags(flags: &Flags) -> String {
    flags.iter().map(|f| f.token()).collect::<Vec<_>>().join("|")
}

pub fn parse_flags(text: &str) -> Result<Flags, MeasureError> {
    text.split('|').filter(|t| !t.is_empty()).map(Flag::from_str).collect()
}

/// Diameters of one single-pixel slice in the three views.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SliceMeasurement {
    pub column: usize,
    pub d_main_mm: Option<f64>,
    pub d_upper_mm: Option<f64>,
    pub d_lower_mm: Option<f64>,
    pub ovality_pct: Option<f64>,
}

impl SliceMeasurement {
    pub fn diameter(&self, p: Projection) -> Option<f64> {
        match p {
            Projection::Main => self.d_main_mm,
            Projection::Upper => self.d_upper_mm,
            Projection::Lower => self.d_lower_mm,
        }
    }

    fn diameter_mut(&mut self, p: Projection) -> &mut Option<f64> {
        match p {
            Projection::Main => &mut self.d_main_mm,
            Projection::Upper => &mut self.d_upper_mm,
            Projection::Lower => &mut self.d_lower_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSummary {
    pub mean_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
    pub count: usize,
}

impl ProjectionSummary {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut sum, mut min, mut max, mut count) = (0.0, f64::INFINITY, f64::NEG_INFINITY, 0);
        for v in values {
            sum += v;
            min = min.min(v);
            max = max.max(v);
            count += 1;
        }
        (count > 0).then(|| Self { mean_mm: sum / count as f64, min_mm: min, max_mm: max, count })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeasurement {
    pub index: u64,
    pub slices: Vec<SliceMeasurement>,
    pub summary: PerProjection<Option<ProjectionSummary>>,
    /// Mean over every slice diameter of every view.
    pub pooled_mean_mm: Option<f64>,
    pub mean_ovality_pct: Option<f64>,
    pub separation_px: Option<f64>,
    /// The separation fell outside a calibration model's fitted range.
    pub extrapolated: bool,
    /// Views whose segmentation failed.
    pub sparse: Vec<Projection>,
    pub flags: Flags,
    pub patch: Option<PseudoSurfacePatch>,
}

impl FrameMeasurement {
    pub fn from_slices(index: u64, slices: Vec<SliceMeasurement>) -> Self {
        let summary = PerProjection::new((), (), ())
            .map(|p, _| ProjectionSummary::of(slices.iter().filter_map(|s| s.diameter(p))));
        let pooled = ProjectionSummary::of(
            slices.iter().flat_map(|s| Projection::ALL.into_iter().filter_map(|p| s.diameter(p))),
        );
        let ovality = ProjectionSummary::of(slices.iter().filter_map(|s| s.ovality_pct));
        Self {
            index,
            slices,
            summary,
            pooled_mean_mm: pooled.map(|s| s.mean_mm),
            mean_ovality_pct: ovality.map(|s| s.mean_mm),
            separation_px: None,
            extrapolated: false,
            sparse: Vec::new(),
            flags: Flags::new(),
            patch: None,
        }
    }

    pub fn has_diameters(&self) -> bool {
        self.pooled_mean_mm.is_some()
    }

    pub fn projection_mean(&self, p: Projection) -> Option<f64> {
        self.summary.get(p).map(|s| s.mean_mm)
    }
}

/// Tolerance flags reproducible from the slice data alone.
pub fn flag_tolerance(fm: &FrameMeasurement, nominal_mm: f64, tolerance_mm: f64, max_ovality_pct: f64) -> Flags {
    let mut flags = Flags::new();
    if !fm.sparse.is_empty() || !fm.has_diameters() {
        flags.insert(Flag::SparseData);
    }
    for (_, summary) in fm.summary.iter() {
        if let Some(s) = summary {
            if s.mean_mm > nominal_mm + tolerance_mm {
                flags.insert(Flag::OverTolerance);
            }
            if s.mean_mm < nominal_mm - tolerance_mm {
                flags.insert(Flag::UnderTolerance);
            }
        }
    }
    if fm.mean_ovality_pct.is_some_and(|o| o > max_ovality_pct) {
        flags.insert(Flag::OvalityExceeded);
    }
    flags
}

/// Segmentation of the three views of one frame.
pub struct FrameSegmentation {
    pub strips: PerProjection<Result<SlicedStrip, SegmentError>>,
}

pub fn segment_frame(frame: &Frame, rig: &RigConfig) -> Result<FrameSegmentation, MeasureError> {
    rig.validate_for(frame.width, frame.height)?;
    let strips = rig.rois().try_map(|_, roi| -> Result<_, MeasureError> {
        let strip = extract_roi(frame, *roi)?;
        Ok(slice_strip(&strip, rig.gradient_threshold, None))
    })?;
    Ok(FrameSegmentation { strips })
}

/// Mean centerline row of one view in frame coordinates.
pub fn frame_center_row(sliced: &SlicedStrip, roi_y: usize) -> f64 {
    let present: Vec<f64> = sliced.edges.iter().flatten().map(|e| e.center()).collect();
    let rows = if present.is_empty() { &sliced.centerline } else { &present };
    roi_y as f64 + rows.iter().sum::<f64>() / rows.len() as f64
}

/// Main-to-upper centerline separation of a segmented frame.
pub fn frame_separation(seg: &FrameSegmentation, rig: &RigConfig) -> Option<f64> {
    match (&seg.strips.main, &seg.strips.upper) {
        (Ok(main), Ok(upper)) => {
            Some((frame_center_row(main, rig.roi_main.y) - frame_center_row(upper, rig.roi_upper.y)).abs())
        }
        _ => None,
    }
}

/// Mean edge-pair width of one view, px.
pub fn mean_width_px(sliced: &SlicedStrip) -> Option<f64> {
    ProjectionSummary::of(sliced.edges.iter().flatten().map(|e| e.width_px())).map(|s| s.mean_mm)
}

/// One calibration sample per view from frames of a filament of known
/// diameter at a known distance. Widths and separations are averaged over
/// the frames before the scale factor is formed.
pub fn calibration_samples(
    frames: &[Frame],
    rig: &RigConfig,
    diameter_mm: f64,
    distance_mm: f64,
) -> Result<PerProjection<CalibrationSample>, MeasureError> {
    if frames.is_empty() {
        return Err(MeasureError::NoFrames);
    }
    let mut widths = PerProjection::new(0.0, 0.0, 0.0);
    let mut separation = 0.0;
    for frame in frames {
        let seg = segment_frame(frame, rig)?;
        for p in Projection::ALL {
            let sliced = seg.strips.get(p).as_ref().map_err(|e| MeasureError::Segmentation {
                index: frame.index,
                projection: p,
                source: e.clone(),
            })?;
            *widths.get_mut(p) += mean_width_px(sliced).unwrap_or(0.0);
        }
        separation += frame_separation(&seg, rig).unwrap_or(0.0);
    }
    let n = frames.len() as f64;
    let x = separation / n;
    Ok(widths.map(|_, w| CalibrationSample { x, y: distance_mm, z: diameter_mm / (w / n) }))
}

/// Full per-frame pipeline. Segmentation failures become the `SparseData`
/// flag rather than errors; only invalid configuration is an error.
pub fn measure_frame(frame: &Frame, rig: &RigConfig, calib: &CalibrationSet) -> Result<FrameMeasurement, MeasureError> {
    let seg = segment_frame(frame, rig)?;
    let separation = frame_separation(&seg, rig);
    let columns = rig.rois().iter().map(|(_, r)| r.w).max().unwrap_or(0);
    let mut slices: Vec<SliceMeasurement> =
        (0..columns).map(|column| SliceMeasurement { column, ..Default::default() }).collect();
    let mut extrapolated = false;

    if let Some(x) = separation {
        for p in Projection::ALL {
            let Ok(sliced) = seg.strips.get(p) else { continue };
            let estimate = scale_for(calib.model(p), x);
            extrapolated |= estimate.extrapolated;
            if !(estimate.scale_mm_per_px > 0.0) {
                continue;
            }
            for (slice, edge) in slices.iter_mut().zip(&sliced.edges) {
                *slice.diameter_mut(p) = edge.map(|e| e.width_px() * estimate.scale_mm_per_px);
            }
        }
    }
    for slice in &mut slices {
        let present: Vec<f64> = Projection::ALL.into_iter().filter_map(|p| slice.diameter(p)).collect();
        if present.len() >= 2 {
            let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = present.iter().copied().fold(f64::INFINITY, f64::min);
            slice.ovality_pct = ovality(max, min, rig.nominal_diameter_mm).ok();
        }
    }

    let mut fm = FrameMeasurement::from_slices(frame.index, slices);
    fm.separation_px = separation;
    fm.extrapolated = extrapolated;
    fm.sparse = Projection::ALL.into_iter().filter(|&p| seg.strips.get(p).is_err()).collect();
    fm.flags = flag_tolerance(
        &fm,
        rig.nominal_diameter_mm,
        rig.tolerance_mm,
        default_max_ovality_pct(rig.nominal_diameter_mm, rig.tolerance_mm),
    );
    if let (Ok(u), Ok(m), Ok(l)) = (&seg.strips.upper, &seg.strips.main, &seg.strips.lower) {
        fm.patch = assemble_patch(u, m, l, frame.index).ok();
    }
    Ok(fm)
}

/// Contiguous run of frames sharing one flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectInterval {
    pub start_mm: f64,
    pub end_mm: f64,
    pub reason: Flag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub measurement: FrameMeasurement,
    pub length_mm: f64,
    pub anomaly_score: Option<f64>,
}

/// Ordered frame measurements along the filament.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    pub feed_rate_mm_s: f64,
    pub period_s: f64,
    pub entries: Vec<LogEntry>,
    pub defects: Vec<DefectInterval>,
}

impl MeasurementLog {
    pub fn new(feed_rate_mm_s: f64, period_s: f64) -> Self {
        Self { feed_rate_mm_s, period_s, entries: Vec::new(), defects: Vec::new() }
    }

    pub fn length_at(&self, index: u64) -> f64 {
        index as f64 * self.feed_rate_mm_s * self.period_s
    }

    /// Appends a frame; flags shared with the previous entry extend that
    /// entry's open defect interval.
    pub fn append(&mut self, fm: FrameMeasurement, anomaly_score: Option<f64>) -> Result<(), MeasureError> {
        let previous_flags = match self.entries.last() {
            Some(last) if fm.index <= last.measurement.index => {
                return Err(MeasureError::NonMonotonicIndex { index: fm.index, last: last.measurement.index })
            }
            Some(last) => last.measurement.flags.clone(),
            None => Flags::new(),
        };
        let length_mm = self.length_at(fm.index);
        for &flag in &fm.flags {
            let open = previous_flags
                .contains(&flag)
                .then(|| self.defects.iter_mut().rev().find(|d| d.reason == flag))
                .flatten();
            match open {
                Some(interval) => interval.end_mm = length_mm,
                None => self.defects.push(DefectInterval { start_mm: length_mm, end_mm: length_mm, reason: flag }),
            }
        }
        self.entries.push(LogEntry { measurement: fm, length_mm, anomaly_score });
        Ok(())
    }

    pub fn rows(&self) -> Vec<LogRow> {
        self.entries.iter().map(LogRow::from_entry).collect()
    }

    pub fn defects_json(&self) -> String {
        serde_json::to_string_pretty(&self.defects).expect("defects serialize")
    }
}

pub fn append_log(log: &mut MeasurementLog, fm: FrameMeasurement) -> Result<(), MeasureError> {
    log.append(fm, None)
}

/// Folds frame measurements, sorted by index, into a log. Texture patches
/// are scored against a running baseline; frames before the baseline is
/// ready, or without a patch, get no score.
pub fn build_log(
    mut measurements: Vec<FrameMeasurement>,
    feed_rate_mm_s: f64,
    period_s: f64,
) -> Result<MeasurementLog, MeasureError> {
    measurements.sort_by_key(|m| m.index);
    let mut log = MeasurementLog::new(feed_rate_mm_s, period_s);
    let mut baseline: Option<AnomalyBaseline> = None;
    for fm in measurements {
        let score = fm.patch.as_ref().and_then(|patch| {
            let b = baseline.get_or_insert_with(|| AnomalyBaseline::new(patch.rows()));
            b.observe(patch).ok()
        });
        log.append(fm, score)?;
    }
    Ok(log)
}

pub const LOG_HEADER: [&str; 9] = [
    "frame",
    "length_mm",
    "d_main_mm",
    "d_upper_mm",
    "d_lower_mm",
    "d_mean_mm",
    "ovality_pct",
    "flags",
    "anomaly_score",
];

/// One CSV row of the measurement log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub frame: u64,
    pub length_mm: f64,
    pub d_main_mm: Option<f64>,
    pub d_upper_mm: Option<f64>,
    pub d_lower_mm: Option<f64>,
    pub d_mean_mm: Option<f64>,
    pub ovality_pct: Option<f64>,
    pub flags: String,
    pub anomaly_score: Option<f64>,
}

impl LogRow {
    pub fn from_entry(e: &LogEntry) -> Self {
        let m = &e.measurement;
        Self {
            frame: m.index,
            length_mm: e.length_mm,
            d_main_mm: m.projection_mean(Projection::Main),
            d_upper_mm: m.projection_mean(Projection::Upper),
            d_lower_mm: m.projection_mean(Projection::Lower),
            d_mean_mm: m.pooled_mean_mm,
            ovality_pct: m.mean_ovality_pct,
            flags: format_flags(&m.flags),
            anomaly_score: e.anomaly_score,
        }
    }

    pub fn diameter(&self, p: Projection) -> Option<f64> {
        match p {
            Projection::Main => self.d_main_mm,
            Projection::Upper => self.d_upper_mm,
            Projection::Lower => self.d_lower_mm,
        }
    }

    fn record(&self) -> [String; 9] {
        let num = |v: Option<f64>, digits: usize| v.map(|v| format!("{v:.digits$}")).unwrap_or_default();
        [
            self.frame.to_string(),
            format!("{:.3}", self.length_mm),
            num(self.d_main_mm, 6),
            num(self.d_upper_mm, 6),
            num(self.d_lower_mm, 6),
            num(self.d_mean_mm, 6),
            num(self.ovality_pct, 4),
            self.flags.clone(),
            num(self.anomaly_score, 6),
        ]
    }
}

/// Writes the log CSV with fixed numeric precision.
pub fn write_log_csv<W: Write>(rows: &[LogRow], out: W) -> Result<(), MeasureError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER).map_err(|e| MeasureError::Csv(e.to_string()))?;
    for row in rows {
        w.write_record(row.record()).map_err(|e| MeasureError::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv<R: Read>(input: R) -> Result<Vec<LogRow>, MeasureError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| MeasureError::Csv(e.to_string()))?;
    if header.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(MeasureError::Csv(format!("unexpected header {:?}", header)));
    }
    let rows = r.deserialize().collect::<Result<Vec<LogRow>, _>>().map_err(|e| MeasureError::Csv(e.to_string()))?;
    for row in &rows {
        parse_flags(&row.flags)?;
    }
    Ok(rows)
}

/// Distribution of one view's per-frame diameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiameterStats {
    pub count: usize,
    pub mean_mm: f64,
    pub std_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
    pub in_tolerance_pct: f64,
}

impl DiameterStats {
    pub fn of(values: &[f64], nominal_mm: f64, tolerance_mm: f64) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inside = values.iter().filter(|v| (*v - nominal_mm).abs() <= tolerance_mm).count();
        Some(Self {
            count: values.len(),
            mean_mm: mean,
            std_mm: var.sqrt(),
            min_mm: values.iter().copied().fold(f64::INFINITY, f64::min),
            max_mm: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            in_tolerance_pct: inside as f64 / n * 100.0,
        })
    }
}

/// Equal-width histogram of `values` over `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    if bins == 0 || !(hi > lo) {
        return counts;
    }
    for &v in values {
        let t = ((v - lo) / (hi - lo) * bins as f64).floor();
        let i = (t.max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ovality_values() {
        assert!((ovality(2.95, 2.85, 3.0).unwrap() - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(ovality(1.75, 1.75, 1.75).unwrap(), 0.0);
        assert!((ovality(1.80, 1.70, 1.75).unwrap() - 5.714_285_714).abs() < 1e-6);
        assert!(matches!(ovality(1.7, 1.8, 1.75), Err(MeasureError::InvalidOrder { .. })));
        assert!(ovality(1.0, 0.0, 1.75).is_err());
    }

    #[test]
    fn ovality_scale_invariant() {
        for k in [0.1, 0.5, 2.0, 13.0] {
            let a = ovality(2.95, 2.85, 3.0).unwrap();
            let b = ovality(2.95 * k, 2.85 * k, 3.0 * k).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn frame_with_mean(index: u64, mean: f64, ovality_pct: Option<f64>) -> FrameMeasurement {
        let slices = (0..4)
            .map(|column| SliceMeasurement {
                column,
                d_main_mm: Some(mean),
                d_upper_mm: Some(mean),
                d_lower_mm: Some(mean),
                ovality_pct,
            })
            .collect();
        FrameMeasurement::from_slices(index, slices)
    }

    #[test]
    fn tolerance_flags() {
        let max_ov = default_max_ovality_pct(1.75, 0.05);
        assert!((max_ov - 5.714_285_714).abs() < 1e-6);
        assert!(flag_tolerance(&frame_with_mean(0, 1.79, Some(0.0)), 1.75, 0.05, max_ov).is_empty());
        assert_eq!(
            flag_tolerance(&frame_with_mean(0, 1.81, Some(0.0)), 1.75, 0.05, max_ov),
            Flags::from([Flag::OverTolerance])
        );
        assert_eq!(
            flag_tolerance(&frame_with_mean(0, 1.69, Some(0.0)), 1.75, 0.05, max_ov),
            Flags::from([Flag::UnderTolerance])
        );
        assert_eq!(
            flag_tolerance(&frame_with_mean(0, 1.75, Some(6.0)), 1.75, 0.05, max_ov),
            Flags::from([Flag::OvalityExceeded])
        );
        let empty = FrameMeasurement::from_slices(0, vec![SliceMeasurement::default(); 3]);
        assert_eq!(flag_tolerance(&empty, 1.75, 0.05, max_ov), Flags::from([Flag::SparseData]));
    }

    fn flagged(index: u64, flags: &[Flag]) -> FrameMeasurement {
        let mut fm = frame_with_mean(index, 1.75, Some(0.0));
        fm.flags = flags.iter().copied().collect();
        fm
    }

    #[test]
    fn log_lengths_and_merging() {
        let mut log = MeasurementLog::new(10.0, 1.0);
        for i in 0..10 {
            let flags: &[Flag] = if (5..=7).contains(&i) { &[Flag::OverTolerance] } else { &[] };
            append_log(&mut log, flagged(i, flags)).unwrap();
        }
        assert_eq!(log.entries[0].length_mm, 0.0);
        assert_eq!(log.entries[1].length_mm, 10.0);
        assert_eq!(log.defects, vec![DefectInterval { start_mm: 50.0, end_mm: 70.0, reason: Flag::OverTolerance }]);
        assert!(matches!(
            append_log(&mut log, flagged(9, &[])),
            Err(MeasureError::NonMonotonicIndex { index: 9, last: 9 })
        ));
    }

    #[test]
    fn intervals_per_reason_do_not_overlap() {
        let mut log = MeasurementLog::new(1.0, 1.0);
        let pattern: [&[Flag]; 7] = [
            &[Flag::OverTolerance],
            &[Flag::OverTolerance, Flag::OvalityExceeded],
            &[Flag::OvalityExceeded],
            &[],
            &[Flag::OverTolerance],
            &[Flag::OverTolerance],
            &[Flag::SparseData],
        ];
        for (i, flags) in pattern.iter().enumerate() {
            append_log(&mut log, flagged(i as u64, flags)).unwrap();
        }
        let over: Vec<(f64, f64)> =
            log.defects.iter().filter(|d| d.reason == Flag::OverTolerance).map(|d| (d.start_mm, d.end_mm)).collect();
        assert_eq!(over, vec![(0.0, 1.0), (4.0, 5.0)]);
        let ov: Vec<(f64, f64)> =
            log.defects.iter().filter(|d| d.reason == Flag::OvalityExceeded).map(|d| (d.start_mm, d.end_mm)).collect();
        assert_eq!(ov, vec![(1.0, 2.0)]);
        let json: serde_json::Value = serde_json::from_str(&log.defects_json()).unwrap();
        assert_eq!(json[0]["reason"], "OverTolerance");
        assert_eq!(json[0]["start_mm"], 0.0);
    }

    #[test]
    fn csv_round_trip_and_layout() {
        let mut log = MeasurementLog::new(10.0, 1.0);
        log.append(flagged(0, &[]), None).unwrap();
        log.append(flagged(1, &[Flag::OverTolerance, Flag::OvalityExceeded]), Some(0.0125)).unwrap();
        log.append(FrameMeasurement::from_slices(2, vec![]), None).unwrap();
        let mut buf = Vec::new();
        write_log_csv(&log.rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], LOG_HEADER.join(","));
        assert_eq!(lines[1], "0,0.000,1.750000,1.750000,1.750000,1.750000,0.0000,,");
        assert_eq!(
            lines[2],
            "1,10.000,1.750000,1.750000,1.750000,1.750000,0.0000,OverTolerance|OvalityExceeded,0.012500"
        );
        assert_eq!(lines[3], "2,20.000,,,,,,,");
        let rows = read_log_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].anomaly_score, Some(0.0125));
        assert_eq!(parse_flags(&rows[1].flags).unwrap().len(), 2);
        assert!(read_log_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn stats_and_histogram() {
        let v = [1.71, 1.74, 1.76, 1.81];
        let s = DiameterStats::of(&v, 1.75, 0.05).unwrap();
        assert_eq!(s.count, 4);
        assert!((s.mean_mm - 1.755).abs() < 1e-12);
        assert_eq!(s.in_tolerance_pct, 75.0);
        assert_eq!(histogram(&v, 1.7, 1.8, 2), vec![2, 2]);
        assert!(DiameterStats::of(&[], 1.75, 0.05).is_none());
    }
}
