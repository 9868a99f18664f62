//! Pseudo-surface texture patches and anomaly scoring.
//!
//! The reflected-light intensity across each rectified band is resampled to a
//! fixed height, and the three views are stacked per column (upper, main,
//! lower) into one map of the visible surface. The map is a texture proxy,
//! not geometry.
//!
//! Scoring is a statistical stand-in: a cell is anomalous when it lies more
//! than 3σ from its row's baseline, and the score is the anomalous fraction.
//! The per-row baseline is an equal-weight average over the first
//! `warmup` patches and an exponential moving average afterwards.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use thiserror::Error;

use crate::acquisition::Strip;
use crate::segmentation::{sample_linear, SlicedStrip};

pub const BAND_SAMPLES: usize = 32;
pub const BASELINE_WARMUP: usize = 10;
pub const BASELINE_DECAY: f64 = 0.95;
pub const DEVIATION_SIGMAS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum TextureError {
    #[error("column {0} has no detected band")]
    AbsentColumn(usize),
    #[error("strip widths differ: upper {upper}, main {main}, lower {lower}")]
    MismatchedWidths { upper: usize, main: usize, lower: usize },
    #[error("baseline has {have} patches, needs {need}")]
    InsufficientBaseline { have: usize, need: usize },
    #[error("patch has {got} rows, baseline expects {expected}")]
    RowMismatch { got: usize, expected: usize },
    #[error("cannot write patch image: {0}")]
    Io(String),
}

/// Intensity samples across the band of one rectified column, from the top
/// edge to the bottom edge inclusive of the outermost band pixels.
pub fn slice_profile(sliced: &SlicedStrip, column: usize, samples: usize) -> Result<Vec<f32>, TextureError> {
    let edges = sliced.rectified_edges(column).ok_or(TextureError::AbsentColumn(column))?;
    let values = sliced.rectified.column(column);
    // pixel i spans [i, i+1); its center is index i in sample space
    let first = edges.top_edge;
    let last = (edges.bottom_edge - 1.0).max(first);
    let step = if samples > 1 { (last - first) / (samples - 1) as f64 } else { 0.0 };
    Ok((0..samples).map(|k| sample_linear(values, first + step * k as f64)).collect())
}

/// Stacked upper ‖ main ‖ lower intensity map, one column per slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSurfacePatch {
    pub index: u64,
    pub band_samples: usize,
    pub map: Strip<f32>,
}

impl PseudoSurfacePatch {
    pub fn columns(&self) -> usize {
        self.map.width
    }

    pub fn rows(&self) -> usize {
        self.map.height
    }

    /// Row-major 8-bit copy, rows are the stacked band samples.
    pub fn to_gray(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.rows() * self.columns());
        for r in 0..self.rows() {
            for c in 0..self.columns() {
                out.push(self.map.get(c, r).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    /// Writes a binary PGM for visual inspection.
    pub fn write_pgm(&self, path: &Path) -> Result<(), TextureError> {
        let file = std::fs::File::create(path).map_err(|e| TextureError::Io(e.to_string()))?;
        PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&self.to_gray(), self.columns() as u32, self.rows() as u32, ExtendedColorType::L8)
            .map_err(|e| TextureError::Io(e.to_string()))
    }
}

/// Profiles for every column of one band, absent columns filled by linear
/// interpolation between the nearest present neighbours.
fn band_profiles(sliced: &SlicedStrip, samples: usize) -> Result<Vec<Vec<f32>>, TextureError> {
    let width = sliced.width();
    let raw: Vec<Option<Vec<f32>>> = (0..width).map(|c| slice_profile(sliced, c, samples).ok()).collect();
    let present: Vec<usize> = (0..width).filter(|&c| raw[c].is_some()).collect();
    if present.is_empty() {
        return Err(TextureError::AbsentColumn(0));
    }
    let profile = |c: usize| raw[c].as_ref().expect("present column");
    let mut out = Vec::with_capacity(width);
    for (c, column) in raw.iter().enumerate() {
        if let Some(p) = column {
            out.push(p.clone());
            continue;
        }
        let idx = present.partition_point(|&p| p < c);
        let left = idx.checked_sub(1).map(|i| present[i]);
        let right = present.get(idx).copied();
        out.push(match (left, right) {
            (Some(l), Some(r)) => {
                let t = (c - l) as f32 / (r - l) as f32;
                profile(l).iter().zip(profile(r)).map(|(x, y)| x + t * (y - x)).collect()
            }
            (Some(edge), None) | (None, Some(edge)) => profile(edge).clone(),
            (None, None) => unreachable!("at least one column is present"),
        });
    }
    Ok(out)
}

pub fn assemble_patch(
    upper: &SlicedStrip,
    main: &SlicedStrip,
    lower: &SlicedStrip,
    index: u64,
) -> Result<PseudoSurfacePatch, TextureError> {
    assemble_patch_with(upper, main, lower, index, BAND_SAMPLES)
}

pub fn assemble_patch_with(
    upper: &SlicedStrip,
    main: &SlicedStrip,
    lower: &SlicedStrip,
    index: u64,
    band_samples: usize,
) -> Result<PseudoSurfacePatch, TextureError> {
    let (wu, wm, wl) = (upper.width(), main.width(), lower.width());
    if wu != wm || wm != wl {
        return Err(TextureError::MismatchedWidths { upper: wu, main: wm, lower: wl });
    }
    let bands =
        [band_profiles(upper, band_samples)?, band_profiles(main, band_samples)?, band_profiles(lower, band_samples)?];
    let mut data = Vec::with_capacity(wm * 3 * band_samples);
    for c in 0..wm {
        for band in &bands {
            data.extend_from_slice(&band[c]);
        }
    }
    Ok(PseudoSurfacePatch { index, band_samples, map: Strip::from_columns(wm, 3 * band_samples, data) })
}

/// Running per-row intensity statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyBaseline {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Cells accumulated per row during warm-up.
    cells: Vec<f64>,
    pub patches: usize,
    pub warmup: usize,
    pub decay: f64,
}

impl AnomalyBaseline {
    pub fn new(rows: usize) -> Self {
        Self::with_params(rows, BASELINE_WARMUP, BASELINE_DECAY)
    }

    pub fn with_params(rows: usize, warmup: usize, decay: f64) -> Self {
        Self { mean: vec![0.0; rows], var: vec![0.0; rows], cells: vec![0.0; rows], patches: 0, warmup, decay }
    }

    pub fn rows(&self) -> usize {
        self.mean.len()
    }

    pub fn is_ready(&self) -> bool {
        self.patches >= self.warmup
    }

    fn check_rows(&self, patch: &PseudoSurfacePatch) -> Result<(), TextureError> {
        if patch.rows() != self.rows() {
            return Err(TextureError::RowMismatch { got: patch.rows(), expected: self.rows() });
        }
        Ok(())
    }

    /// Folds one patch into the statistics.
    pub fn update(&mut self, patch: &PseudoSurfacePatch) -> Result<(), TextureError> {
        self.check_rows(patch)?;
        let n = patch.columns() as f64;
        if n == 0.0 {
            return Ok(());
        }
        let warm = self.patches < self.warmup;
        for r in 0..self.rows() {
            let (mut sum, mut sq) = (0.0, 0.0);
            for c in 0..patch.columns() {
                sum += patch.map.get(c, r) as f64;
            }
            let batch_mean = sum / n;
            for c in 0..patch.columns() {
                let d = patch.map.get(c, r) as f64 - batch_mean;
                sq += d * d;
            }
            let batch_var = sq / n;
            let (old_mean, old_var) = (self.mean[r], self.var[r]);
            if warm {
                // pooled equal-weight combination of all cells so far
                let m = self.cells[r];
                let total = m + n;
                let delta = batch_mean - old_mean;
                let new_mean = old_mean + delta * n / total;
                let m2 = old_var * m + batch_var * n + delta * delta * m * n / total;
                self.mean[r] = new_mean;
                self.var[r] = m2 / total;
                self.cells[r] = total;
            } else {
                let lambda = self.decay;
                let new_mean = lambda * old_mean + (1.0 - lambda) * batch_mean;
                self.var[r] = lambda * (old_var + (old_mean - new_mean).powi(2))
                    + (1.0 - lambda) * (batch_var + (batch_mean - new_mean).powi(2));
                self.mean[r] = new_mean;
            }
        }
        self.patches += 1;
        Ok(())
    }

    /// Scores `patch` against the current statistics, then folds it in.
    /// The patch is folded in even when the baseline is still warming up.
    pub fn observe(&mut self, patch: &PseudoSurfacePatch) -> Result<f64, TextureError> {
        let score = anomaly_score(patch, self);
        self.update(patch)?;
        score
    }
}

/// Fraction of cells more than 3σ from their row's baseline mean.
pub fn anomaly_score(patch: &PseudoSurfacePatch, baseline: &AnomalyBaseline) -> Result<f64, TextureError> {
    if !baseline.is_ready() {
        return Err(TextureError::InsufficientBaseline { have: baseline.patches, need: baseline.warmup });
    }
    baseline.check_rows(patch)?;
    let cells = patch.rows() * patch.columns();
    if cells == 0 {
        return Ok(0.0);
    }
    let mut outliers = 0usize;
    for r in 0..patch.rows() {
        let limit = DEVIATION_SIGMAS * baseline.var[r].max(0.0).sqrt();
        let mean = baseline.mean[r];
        for c in 0..patch.columns() {
            if (patch.map.get(c, r) as f64 - mean).abs() > limit {
                outliers += 1;
            }
        }
    }
    Ok(outliers as f64 / cells as f64)
}
