//! Pixel-to-millimetre calibration.
//!
//! The true object size follows the pinhole law `p = F·W/L`, so the scale
//! factor depends on the unknown camera distance. The pixel separation `x`
//! between the main image and a mirror image moves with that distance, which
//! makes it a usable proxy. A straight line in `(x, y, z)` space, with `y` the
//! camera distance in mm and `z` the scale factor in mm/px, is fitted per
//! projection:
//!
//! ```text
//! (x - x1) / a = (y - y1) / b = (z - z1) / c
//! ```
//!
//! The relation is only linear for small displacements, so each model keeps
//! the x range it was fitted on and flags extrapolation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{PerProjection, Projection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("distance must be > 0 (got {0})")]
    NonPositiveDistance(f64),
    #[error("focal length must be > 0 (got {0})")]
    NonPositiveFocal(f64),
    #[error("object size must be >= 0 (got {0})")]
    NegativeSize(f64),
    #[error("scale factor must be > 0 (got {0})")]
    NonPositiveScale(f64),
    #[error("pixel width must be >= 0 (got {0})")]
    NegativeWidth(f64),
    #[error("centerline is empty")]
    EmptyCenterline,
    #[error("need at least 2 calibration samples, got {0}")]
    TooFewSamples(usize),
    #[error("calibration samples share one separation value")]
    DegenerateSamples,
    #[error("invalid calibration model: {0}")]
    InvalidModel(String),
    #[error("calibration file: {0}")]
    File(String),
}

/// Ideal pinhole camera: focal length and sensor pixel density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeModel {
    pub focal_mm: f64,
    pub px_per_mm_sensor: f64,
}

impl PinholeModel {
    pub fn new(focal_mm: f64, px_per_mm_sensor: f64) -> Result<Self, CalibrationError> {
        if !(focal_mm > 0.0) {
            return Err(CalibrationError::NonPositiveFocal(focal_mm));
        }
        if !(px_per_mm_sensor > 0.0) {
            return Err(CalibrationError::NonPositiveScale(px_per_mm_sensor));
        }
        Ok(Self { focal_mm, px_per_mm_sensor })
    }

    /// Image size in pixels of an object `size_mm` wide at `distance_mm`.
    pub fn projected_px(&self, size_mm: f64, distance_mm: f64) -> Result<f64, CalibrationError> {
        Ok(project(size_mm, self.focal_mm, distance_mm)? * self.px_per_mm_sensor)
    }

    /// True mm-per-pixel scale at `distance_mm`.
    pub fn scale_at(&self, distance_mm: f64) -> Result<f64, CalibrationError> {
        if !(distance_mm > 0.0) {
            return Err(CalibrationError::NonPositiveDistance(distance_mm));
        }
        Ok(distance_mm / (self.focal_mm * self.px_per_mm_sensor))
    }
}

/// Sensor-plane projection size `F·W/L` in mm.
pub fn project(size_mm: f64, focal_mm: f64, distance_mm: f64) -> Result<f64, CalibrationError> {
    if !(distance_mm > 0.0) {
        return Err(CalibrationError::NonPositiveDistance(distance_mm));
    }
    if !(focal_mm > 0.0) {
        return Err(CalibrationError::NonPositiveFocal(focal_mm));
    }
    if !(size_mm >= 0.0) {
        return Err(CalibrationError::NegativeSize(size_mm));
    }
    // F/L first so that L = F returns W exactly
    Ok(size_mm * (focal_mm / distance_mm))
}

/// `D = d·s`.
pub fn px_to_mm(width_px: f64, scale_mm_per_px: f64) -> Result<f64, CalibrationError> {
    if !(scale_mm_per_px > 0.0) {
        return Err(CalibrationError::NonPositiveScale(scale_mm_per_px));
    }
    if !(width_px >= 0.0) {
        return Err(CalibrationError::NegativeWidth(width_px));
    }
    Ok(width_px * scale_mm_per_px)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Pixel distance between two centerlines given in frame rows.
pub fn separation(main_rows: &[f64], mirror_rows: &[f64]) -> Result<f64, CalibrationError> {
    match (mean(main_rows), mean(mirror_rows)) {
        (Some(a), Some(b)) => Ok((a - b).abs()),
        _ => Err(CalibrationError::EmptyCenterline),
    }
}

/// One calibration observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    /// Main-to-upper centerline separation, px.
    pub x: f64,
    /// Camera-to-filament distance, mm.
    pub y: f64,
    /// Scale factor, mm/px.
    pub z: f64,
}

/// Straight calibration line through `(x1, y1, z1)` with direction `(a, b, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationModel {
    pub x1: f64,
    pub y1: f64,
    pub z1: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub valid_x_range: [f64; 2],
    /// RMS of the scale-factor residuals, mm/px.
    pub residual_rms: f64,
}

/// Distance and scale read off the calibration line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEstimate {
    pub distance_mm: f64,
    pub scale_mm_per_px: f64,
    pub extrapolated: bool,
}

impl CalibrationModel {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let finite = [self.x1, self.y1, self.z1, self.a, self.b, self.c, self.residual_rms]
            .iter()
            .chain(self.valid_x_range.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(CalibrationError::InvalidModel("non-finite coefficient".into()));
        }
        if self.a == 0.0 {
            return Err(CalibrationError::InvalidModel("a must be non-zero".into()));
        }
        if self.valid_x_range[0] > self.valid_x_range[1] {
            return Err(CalibrationError::InvalidModel("empty valid_x_range".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.valid_x_range[0] && x <= self.valid_x_range[1]
    }
}

/// Evaluates the calibration line at separation `x`.
pub fn scale_for(model: &CalibrationModel, x: f64) -> ScaleEstimate {
    let t = (x - model.x1) / model.a;
    ScaleEstimate {
        distance_mm: model.y1 + model.b * t,
        scale_mm_per_px: model.z1 + model.c * t,
        extrapolated: !model.contains(x),
    }
}

/// Least-squares line through the samples, parameterised by `x`.
///
/// `y` and `z` are regressed on `x`, so the direction is `(1, b, c)` and the
/// anchor is the sample centroid.
pub fn fit_calibration(samples: &[CalibrationSample]) -> Result<CalibrationModel, CalibrationError> {
    if samples.len() < 2 {
        return Err(CalibrationError::TooFewSamples(samples.len()));
    }
    let n = samples.len() as f64;
    let x1 = samples.iter().map(|s| s.x).sum::<f64>() / n;
    let y1 = samples.iter().map(|s| s.y).sum::<f64>() / n;
    let z1 = samples.iter().map(|s| s.z).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut sxz) = (0.0, 0.0, 0.0);
    for s in samples {
        let dx = s.x - x1;
        sxx += dx * dx;
        sxy += dx * (s.y - y1);
        sxz += dx * (s.z - z1);
    }
    let spread = samples.iter().map(|s| (s.x - x1).abs()).fold(0.0, f64::max);
    if spread == 0.0 || sxx <= f64::EPSILON * x1.abs().max(1.0) {
        return Err(CalibrationError::DegenerateSamples);
    }
    let (b, c) = (sxy / sxx, sxz / sxx);
    let residual_rms = (samples
        .iter()
        .map(|s| {
            let r = s.z - (z1 + c * (s.x - x1));
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    let lo = samples.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max);
    Ok(CalibrationModel { x1, y1, z1, a: 1.0, b, c, valid_x_range: [lo, hi], residual_rms })
}

/// One calibration line per projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSet {
    pub main: CalibrationModel,
    pub upper: CalibrationModel,
    pub lower: CalibrationModel,
}

impl CalibrationSet {
    pub fn fit(samples: &PerProjection<Vec<CalibrationSample>>) -> Result<Self, CalibrationError> {
        let models = samples.try_map(|_, s| fit_calibration(s))?;
        Ok(Self::from(models))
    }

    pub fn model(&self, p: Projection) -> &CalibrationModel {
        match p {
            Projection::Main => &self.main,
            Projection::Upper => &self.upper,
            Projection::Lower => &self.lower,
        }
    }

    pub fn max_residual_rms(&self) -> f64 {
        self.main.residual_rms.max(self.upper.residual_rms).max(self.lower.residual_rms)
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        self.main.validate()?;
        self.upper.validate()?;
        self.lower.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CalibrationError> {
        let set: CalibrationSet = serde_json::from_str(text).map_err(|e| CalibrationError::File(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = fs::read_to_string(path).map_err(|e| CalibrationError::File(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        fs::write(path, self.to_json() + "\n").map_err(|e| CalibrationError::File(format!("{}: {e}", path.display())))
    }
}

impl From<PerProjection<CalibrationModel>> for CalibrationSet {
    fn from(p: PerProjection<CalibrationModel>) -> Self {
        Self { main: p.main, upper: p.upper, lower: p.lower }
    }
}
