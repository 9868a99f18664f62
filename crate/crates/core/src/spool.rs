//! Spool winding arithmetic.
//!
//! Layers are concentric cylinders with radial pitch `d`: layer `k` has
//! radius `R + (k-1)·d` and holds `n` turns, so it takes
//! `2π·n·(R + (k-1)·d)` mm of filament.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpoolError {
    #[error("invalid spool: {0}")]
    InvalidSpec(String),
    #[error("layer {layer} outside 1..={layers}")]
    LayerOutOfRange { layer: u32, layers: u32 },
    #[error("feed rate must be > 0 (got {0})")]
    NonPositiveFeed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoolSpec {
    /// Core radius, mm.
    pub radius_mm: f64,
    /// Filament diameters across the spool width.
    pub turns_per_layer: u32,
    pub layers: u32,
    pub filament_diameter_mm: f64,
}

impl SpoolSpec {
    pub fn new(
        radius_mm: f64,
        turns_per_layer: u32,
        layers: u32,
        filament_diameter_mm: f64,
    ) -> Result<Self, SpoolError> {
        let spec = Self { radius_mm, turns_per_layer, layers, filament_diameter_mm };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpoolError> {
        if !(self.radius_mm > 0.0) || !self.radius_mm.is_finite() {
            return Err(SpoolError::InvalidSpec(format!("radius {} must be > 0", self.radius_mm)));
        }
        if self.turns_per_layer < 1 || self.layers < 1 {
            return Err(SpoolError::InvalidSpec("turns per layer and layer count must be >= 1".into()));
        }
        if !(self.filament_diameter_mm > 0.0) || !self.filament_diameter_mm.is_finite() {
            return Err(SpoolError::InvalidSpec(format!(
                "filament diameter {} must be > 0",
                self.filament_diameter_mm
            )));
        }
        Ok(())
    }

    fn layer_radius(&self, layer: u32) -> f64 {
        self.radius_mm + (layer - 1) as f64 * self.filament_diameter_mm
    }
}

/// Filament length of layer `layer` (1-based).
pub fn layer_length(spec: &SpoolSpec, layer: u32) -> Result<f64, SpoolError> {
    if layer < 1 || layer > spec.layers {
        return Err(SpoolError::LayerOutOfRange { layer, layers: spec.layers });
    }
    Ok(2.0 * PI * spec.turns_per_layer as f64 * spec.layer_radius(layer))
}

/// Total filament on a full spool: `2π·n·(R·m + Σ_{i=2..m} (i-1)·d)`.
pub fn total_length(spec: &SpoolSpec) -> f64 {
    let m = spec.layers as f64;
    // Σ_{i=2..m} (i-1) = m(m-1)/2
    let stacked = m * (m - 1.0) / 2.0 * spec.filament_diameter_mm;
    2.0 * PI * spec.turns_per_layer as f64 * (spec.radius_mm * m + stacked)
}

/// Winding step for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerStep {
    pub layer: u32,
    pub length_mm: f64,
    /// Spool angular speed that keeps the filament speed equal to the feed.
    pub rev_per_s: f64,
    pub duration_s: f64,
    /// Time at which this layer is complete.
    pub switch_time_s: f64,
}

/// Stepwise angular-speed schedule at constant linear feed.
pub fn speed_schedule(spec: &SpoolSpec, feed_rate_mm_s: f64) -> Result<Vec<LayerStep>, SpoolError> {
    if !(feed_rate_mm_s > 0.0) {
        return Err(SpoolError::NonPositiveFeed(feed_rate_mm_s));
    }
    let mut elapsed = 0.0;
    (1..=spec.layers)
        .map(|layer| {
            let length_mm = layer_length(spec, layer)?;
            let duration_s = length_mm / feed_rate_mm_s;
            elapsed += duration_s;
            Ok(LayerStep {
                layer,
                length_mm,
                rev_per_s: feed_rate_mm_s / (2.0 * PI * spec.layer_radius(layer)),
                duration_s,
                switch_time_s: elapsed,
            })
        })
        .collect()
}
