#![allow(dead_code)]

use filagauge::calibration::CalibrationSample;
use filagauge::measurement::{calibration_samples, measure_frame};
use filagauge::synth::{default_rig, render_frame, ProfileSegment, SynthScene};
use filagauge::{CalibrationSet, FrameMeasurement, PerProjection, RigConfig};

pub const CALIBRATION_DISTANCES: [f64; 3] = [48.0, 50.0, 52.0];

pub fn rig_for(nominal_mm: f64) -> RigConfig {
    RigConfig { nominal_diameter_mm: nominal_mm, ..default_rig() }
}

pub fn scene(diameter_mm: f64, distance_mm: f64) -> SynthScene {
    SynthScene {
        distance_mm,
        nominal_diameter_mm: diameter_mm,
        profile: vec![ProfileSegment::circular(0, diameter_mm)],
        ..SynthScene::default()
    }
}

/// Fits a calibration from noise-free renders of a circular filament of
/// known diameter at each distance.
pub fn calibrate(rig: &RigConfig, diameter_mm: f64, distances: &[f64]) -> CalibrationSet {
    let mut samples: PerProjection<Vec<CalibrationSample>> = PerProjection::default();
    for &distance in distances {
        let s = scene(diameter_mm, distance);
        let frames: Vec<_> = (0..3).map(|i| render_frame(&s, i).unwrap().0).collect();
        let observed = calibration_samples(&frames, rig, diameter_mm, distance).unwrap();
        for (p, sample) in observed.iter() {
            samples.get_mut(p).push(*sample);
        }
    }
    CalibrationSet::fit(&samples).unwrap()
}

pub fn measure_scene(
    scene: &SynthScene,
    frames: u64,
    rig: &RigConfig,
    calib: &CalibrationSet,
) -> Vec<FrameMeasurement> {
    (0..frames)
        .map(|i| {
            let (frame, _) = render_frame(scene, i).unwrap();
            measure_frame(&frame, rig, calib).unwrap()
        })
        .collect()
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}
