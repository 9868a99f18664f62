//! Filament diameter gauge built around one camera and two 45° mirrors.
//!
//! Each frame holds three views of the filament: the direct image and two
//! mirror reflections. The pipeline stages are:
//!
//! 1. **Acquisition** – frame loading, grayscale reduction, ROI cropping.
//! 2. **Segmentation** – per-column gradient edges, masks, centerlines,
//!    rectification.
//! 3. **Calibration** – pinhole projection, mirror separation as a distance
//!    proxy, linear scale model per view.
//! 4. **Measurement** – calibrated diameters, ovality, tolerance flags and
//!    the along-length log.
//! 5. **Texture** – pseudo-surface patches and a statistical anomaly score.
//!
//! [`spool`] holds the winding arithmetic and [`synth`] renders synthetic
//! frames with exact ground truth.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod calibration;
pub mod measurement;
pub mod segmentation;
pub mod spool;
pub mod synth;
pub mod texture;

pub use acquisition::{Frame, RigConfig, Roi, Strip};
pub use calibration::{CalibrationModel, CalibrationSet, PinholeModel};
pub use measurement::{FrameMeasurement, MeasurementLog};
pub use segmentation::{EdgePair, SlicedStrip};

use serde::{Deserialize, Serialize};

/// One of the three simultaneous views of the filament.
///
/// Labels are image-space: the camera image is upside down, so `Upper` is the
/// physically lower mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Main,
    Upper,
    Lower,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Main, Projection::Upper, Projection::Lower];

    pub fn name(self) -> &'static str {
        match self {
            Projection::Main => "main",
            Projection::Upper => "upper",
            Projection::Lower => "lower",
        }
    }
}

impl std::fmt::Display for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A value per projection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerProjection<T> {
    pub main: T,
    pub upper: T,
    pub lower: T,
}

impl<T> PerProjection<T> {
    pub fn new(main: T, upper: T, lower: T) -> Self {
        Self { main, upper, lower }
    }

    pub fn get(&self, p: Projection) -> &T {
        match p {
            Projection::Main => &self.main,
            Projection::Upper => &self.upper,
            Projection::Lower => &self.lower,
        }
    }

    pub fn get_mut(&mut self, p: Projection) -> &mut T {
        match p {
            Projection::Main => &mut self.main,
            Projection::Upper => &mut self.upper,
            Projection::Lower => &mut self.lower,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Projection, &T) -> U) -> PerProjection<U> {
        PerProjection {
            main: f(Projection::Main, &self.main),
            upper: f(Projection::Upper, &self.upper),
            lower: f(Projection::Lower, &self.lower),
        }
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(Projection, &T) -> Result<U, E>) -> Result<PerProjection<U>, E> {
        Ok(PerProjection {
            main: f(Projection::Main, &self.main)?,
            upper: f(Projection::Upper, &self.upper)?,
            lower: f(Projection::Lower, &self.lower)?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (Projection, &T)> {
        Projection::ALL.into_iter().map(move |p| (p, self.get(p)))
    }
}
