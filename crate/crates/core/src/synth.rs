//! Deterministic synthetic frames with exact ground truth.
//!
//! The camera sits at the origin looking along the depth axis; its optical
//! axis images to row `axis_row`. The filament crosses the view horizontally
//! at distance `L`. Each 45° mirror produces a virtual image displaced by the
//! mirror offset `h` both vertically and in depth, so a mirror band is
//! centred `F·h/(L+h)` sensor-mm from the axis and scaled by `1/(L+h)`.
//! Mirrors show the cross-section rotated by ±90°, so an elliptical filament
//! aligned with the main view shows its minor axis in both reflections.
//!
//! Band edges are anti-aliased by exact area coverage. Noise is additive,
//! clipped Gaussian driven by a ChaCha stream keyed on `(seed, frame index)`.

use std::f64::consts::PI;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{Frame, RigConfig, Roi};
use crate::calibration::PinholeModel;
use crate::{PerProjection, Projection};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("{view} band spans rows {top:.1}..{bottom:.1}, outside the {height}-row frame")]
    SceneOutOfFrame { view: &'static str, top: f64, bottom: f64, height: usize },
    #[error("io: {0}")]
    IoFailure(String),
}

/// Cross-section from `start_frame` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSegment {
    pub start_frame: u64,
    pub major_mm: f64,
    pub minor_mm: f64,
    /// Angle of the major axis from the main view's image vertical.
    #[serde(default)]
    pub orientation_rad: f64,
}

impl ProfileSegment {
    pub fn circular(start_frame: u64, diameter_mm: f64) -> Self {
        Self { start_frame, major_mm: diameter_mm, minor_mm: diameter_mm, orientation_rad: 0.0 }
    }

    /// Visible extent in the main view and in the ±90° mirror views.
    pub fn extents(&self) -> (f64, f64) {
        let (a, b) = (self.major_mm / 2.0, self.minor_mm / 2.0);
        let (s, c) = self.orientation_rad.sin_cos();
        let main = 2.0 * (a * a * c * c + b * b * s * s).sqrt();
        let side = 2.0 * (a * a * s * s + b * b * c * c).sqrt();
        (main, side)
    }
}

/// Dark spot on one side of the filament surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePit {
    pub frame: u64,
    pub view: Projection,
    /// Frame column of the pit centre.
    pub column: f64,
    /// Position across the band, -1 (top edge) to 1 (bottom edge).
    #[serde(default)]
    pub across: f64,
    pub radius_px: f64,
    /// Intensity removed at the pit centre.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScene {
    pub width: usize,
    pub height: usize,
    pub pinhole: PinholeModel,
    /// Image row of the optical axis through the camera origin.
    pub axis_row: f64,
    pub distance_mm: f64,
    pub mirror_offset_upper_mm: f64,
    pub mirror_offset_lower_mm: f64,
    /// Empty profile renders no filament.
    pub profile: Vec<ProfileSegment>,
    pub nominal_diameter_mm: f64,
    pub background: f64,
    pub filament_intensity: f64,
    /// Fractional darkening toward the band edges (Lambertian-style falloff).
    pub shading: f64,
    pub texture_amplitude: f64,
    /// Vertical bow of the filament across the frame, px at the centre column.
    pub bow_px: f64,
    pub pits: Vec<SurfacePit>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub period_s: f64,
}

impl Default for SynthScene {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            pinhole: PinholeModel { focal_mm: 2.8, px_per_mm_sensor: 350.0 },
            axis_row: 240.0,
            distance_mm: 50.0,
            mirror_offset_upper_mm: 7.0,
            mirror_offset_lower_mm: 7.0,
            profile: vec![ProfileSegment::circular(0, 1.75)],
            nominal_diameter_mm: 1.75,
            background: 200.0,
            filament_intensity: 70.0,
            shading: 0.2,
            texture_amplitude: 3.0,
            bow_px: 0.0,
            pits: Vec::new(),
            noise_sigma: 0.0,
            seed: 1,
            period_s: 1.0,
        }
    }
}

/// Per-frame truth for the three bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub index: u64,
    /// Mean of major and minor axes; `None` without filament.
    pub true_d_mm: Option<f64>,
    pub true_ovality_pct: Option<f64>,
    pub widths_px: Option<PerProjection<f64>>,
    /// Mean band centre row in frame coordinates.
    pub centers_px: Option<PerProjection<f64>>,
    pub separation_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<GroundTruthFrame>,
}

#[derive(Debug, Clone, Copy)]
struct BandGeometry {
    center: f64,
    width: f64,
    /// Surface phase of this view around the cylinder.
    phase: f64,
}

impl SynthScene {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScene(m.into()));
        if self.width == 0 || self.height == 0 {
            return bad("frame dimensions must be >= 1");
        }
        if !(self.pinhole.focal_mm > 0.0 && self.pinhole.px_per_mm_sensor > 0.0) {
            return bad("pinhole parameters must be > 0");
        }
        if !(self.distance_mm > self.pinhole.focal_mm) {
            return bad("distance must exceed focal length");
        }
        if !(self.mirror_offset_upper_mm > 0.0 && self.mirror_offset_lower_mm > 0.0) {
            return bad("mirror offsets must be > 0");
        }
        if self.profile.iter().any(|s| !(s.major_mm > 0.0 && s.minor_mm > 0.0)) {
            return bad("profile axes must be > 0");
        }
        if !(self.nominal_diameter_mm > 0.0) {
            return bad("nominal diameter must be > 0");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0");
        }
        Ok(())
    }

    pub fn segment_at(&self, index: u64) -> Option<&ProfileSegment> {
        self.profile.iter().filter(|s| s.start_frame <= index).max_by_key(|s| s.start_frame)
    }

    fn px_per_mm_at(&self, path_mm: f64) -> f64 {
        self.pinhole.focal_mm * self.pinhole.px_per_mm_sensor / path_mm
    }

    fn bands(&self, seg: &ProfileSegment) -> PerProjection<BandGeometry> {
        let (main_extent, side_extent) = seg.extents();
        let l = self.distance_mm;
        let (hu, hl) = (self.mirror_offset_upper_mm, self.mirror_offset_lower_mm);
        PerProjection::new(
            BandGeometry { center: self.axis_row, width: main_extent * self.px_per_mm_at(l), phase: 0.0 },
            BandGeometry {
                center: self.axis_row - hu * self.px_per_mm_at(l + hu),
                width: side_extent * self.px_per_mm_at(l + hu),
                phase: PI / 2.0,
            },
            BandGeometry {
                center: self.axis_row + hl * self.px_per_mm_at(l + hl),
                width: side_extent * self.px_per_mm_at(l + hl),
                phase: -PI / 2.0,
            },
        )
    }

    fn bow_at(&self, x: f64) -> f64 {
        let half = self.width as f64 / 2.0;
        let t = (x - half) / half;
        self.bow_px * (1.0 - t * t)
    }

    fn mean_bow(&self) -> f64 {
        (0..self.width).map(|c| self.bow_at(c as f64 + 0.5)).sum::<f64>() / self.width as f64
    }

    /// Exact truth for frame `index`, without rendering.
    pub fn ground_truth(&self, index: u64) -> GroundTruthFrame {
        let Some(seg) = self.segment_at(index) else {
            return GroundTruthFrame {
                index,
                true_d_mm: None,
                true_ovality_pct: None,
                widths_px: None,
                centers_px: None,
                separation_px: None,
            };
        };
        let bands = self.bands(seg);
        let (main, side) = seg.extents();
        let bow = self.mean_bow();
        let centers = bands.map(|_, b| b.center + bow);
        GroundTruthFrame {
            index,
            true_d_mm: Some(0.5 * (seg.major_mm + seg.minor_mm)),
            true_ovality_pct: Some((main.max(side) - main.min(side)) / self.nominal_diameter_mm * 100.0),
            widths_px: Some(bands.map(|_, b| b.width)),
            separation_px: Some((centers.main - centers.upper).abs()),
            centers_px: Some(centers),
        }
    }

    /// True mm-per-pixel scale of each view at the scene distance.
    pub fn true_scales(&self) -> PerProjection<f64> {
        let l = self.distance_mm;
        PerProjection::new(
            1.0 / self.px_per_mm_at(l),
            1.0 / self.px_per_mm_at(l + self.mirror_offset_upper_mm),
            1.0 / self.px_per_mm_at(l + self.mirror_offset_lower_mm),
        )
    }

    fn surface(&self, view: Projection, band: &BandGeometry, x: f64, u: f64, index: u64) -> f64 {
        let rim = 1.0 - (1.0 - u * u).max(0.0).sqrt();
        let mut value = self.filament_intensity * (1.0 - self.shading * rim);
        if self.texture_amplitude != 0.0 {
            let s = x + index as f64 * self.width as f64;
            let phi = u.clamp(-1.0, 1.0).asin() + band.phase;
            value += self.texture_amplitude
                * (0.6 * (2.0 * PI * s / 23.0 + 2.0 * phi).sin() + 0.4 * (2.0 * PI * s / 61.0 - 3.0 * phi).sin());
        }
        for pit in self.pits.iter().filter(|p| p.frame == index && p.view == view) {
            let dy = (u - pit.across) * band.width / 2.0;
            let d2 = (x - pit.column).powi(2) + dy * dy;
            let r2 = pit.radius_px * pit.radius_px;
            if d2 < r2 {
                value -= pit.depth * (1.0 - d2 / r2);
            }
        }
        value
    }
}

/// Renders frame `index` and its ground truth.
pub fn render_frame(scene: &SynthScene, index: u64) -> Result<(Frame, GroundTruthFrame), SynthError> {
    scene.validate()?;
    let (w, h) = (scene.width, scene.height);
    let mut values = vec![scene.background; w * h];
    let truth = scene.ground_truth(index);

    if let Some(seg) = scene.segment_at(index) {
        let bands = scene.bands(seg);
        for (view, band) in bands.iter() {
            for x in 0..w {
                let xc = x as f64 + 0.5;
                let center = band.center + scene.bow_at(xc);
                let (top, bottom) = (center - band.width / 2.0, center + band.width / 2.0);
                if top < 0.0 || bottom > h as f64 {
                    return Err(SynthError::SceneOutOfFrame { view: view.name(), top, bottom, height: h });
                }
                for r in top.floor() as usize..(bottom.ceil() as usize).min(h) {
                    let (lo, hi) = (r as f64, r as f64 + 1.0);
                    let (a, b) = (lo.max(top), hi.min(bottom));
                    let cover = b - a;
                    if cover <= 0.0 {
                        continue;
                    }
                    let u = ((a + b) / 2.0 - center) / (band.width / 2.0);
                    let surface = scene.surface(view, band, xc, u, index);
                    let v = &mut values[r * w + x];
                    *v = *v * (1.0 - cover) + surface * cover;
                }
            }
        }
    }

    if scene.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(index);
        let normal = Normal::new(0.0, scene.noise_sigma).expect("finite sigma");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let pixels = values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let frame = Frame::new(w, h, pixels, index, scene.period_s).map_err(|e| SynthError::InvalidScene(e.to_string()))?;
    Ok((frame, truth))
}

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:05}.png")
}

pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let img = GrayImage::from_raw(frame.width as u32, frame.height as u32, frame.pixels.clone())
        .expect("frame buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encoding to memory");
    out.into_inner()
}

/// Writes `count` PNG frames plus `ground_truth.json` into `dir`.
pub fn render_sequence(scene: &SynthScene, count: u64, dir: &Path) -> Result<GroundTruth, SynthError> {
    if count == 0 {
        return Err(SynthError::InvalidScene("frame count must be >= 1".into()));
    }
    let io = |e: std::io::Error| SynthError::IoFailure(e.to_string());
    fs::create_dir_all(dir).map_err(io)?;
    let mut truth = GroundTruth::default();
    for index in 0..count {
        let (frame, gt) = render_frame(scene, index)?;
        fs::write(dir.join(frame_file_name(index)), encode_png(&frame)).map_err(io)?;
        truth.frames.push(gt);
    }
    let json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    fs::write(dir.join("ground_truth.json"), json + "\n").map_err(io)?;
    Ok(truth)
}

/// Rig matching the default scene geometry; covers distances of roughly
/// 45–55 mm and diameters up to 3 mm.
pub fn default_rig() -> RigConfig {
    RigConfig {
        roi_main: Roi::new(20, 185, 600, 110),
        roi_upper: Roi::new(20, 40, 600, 140),
        roi_lower: Roi::new(20, 300, 600, 140),
        gradient_threshold: crate::segmentation::DEFAULT_GRADIENT_THRESHOLD,
        nominal_diameter_mm: 1.75,
        tolerance_mm: crate::acquisition::DEFAULT_TOLERANCE_MM,
        feed_rate_mm_s: 10.0,
        period_s: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SynthScene {
        SynthScene { texture_amplitude: 0.0, shading: 0.0, ..SynthScene::default() }
    }

    #[test]
    fn empty_profile_is_uniform() {
        let scene = SynthScene { profile: vec![], ..SynthScene::default() };
        let (frame, gt) = render_frame(&scene, 0).unwrap();
        assert!(frame.pixels.iter().all(|&p| p == 200));
        assert_eq!(gt.true_d_mm, None);
    }

    #[test]
    fn circular_band_width_follows_pinhole() {
        // L = F·k with k = 50 / 2.8
        let scene = quiet();
        let k = scene.distance_mm / scene.pinhole.focal_mm;
        let gt = render_frame(&scene, 0).unwrap().1;
        let widths = gt.widths_px.unwrap();
        assert!((widths.main - 1.75 / k * 350.0).abs() < 1e-9);
        // mirror widths scale with the longer path only
        let ratio = (scene.distance_mm + 7.0) / scene.distance_mm;
        assert!((widths.upper * ratio - widths.main).abs() < 1e-9);
        assert_eq!(widths.upper, widths.lower);
    }

    #[test]
    fn ellipse_extents_per_view() {
        let seg = ProfileSegment { start_frame: 0, major_mm: 3.0, minor_mm: 2.9, orientation_rad: 0.0 };
        assert_eq!(seg.extents(), (3.0, 2.9));
        let turned = ProfileSegment { orientation_rad: PI / 2.0, ..seg };
        let (m, s) = turned.extents();
        assert!((m - 2.9).abs() < 1e-12 && (s - 3.0).abs() < 1e-12);
        let scene = SynthScene { profile: vec![seg], nominal_diameter_mm: 3.0, ..quiet() };
        let gt = scene.ground_truth(0);
        assert!((gt.true_ovality_pct.unwrap() - 10.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn rendered_column_integrates_to_width() {
        let scene = quiet();
        let (frame, gt) = render_frame(&scene, 0).unwrap();
        // band darkness summed down one column recovers the covered length
        let col = 300;
        let covered: f64 = (185..295).map(|r| (200.0 - frame.get(col, r) as f64) / (200.0 - 70.0)).sum();
        assert!((covered - gt.widths_px.unwrap().main).abs() < 0.3, "{covered}");
    }

    #[test]
    fn out_of_frame_scene_is_rejected() {
        let scene = SynthScene { distance_mm: 8.0, ..SynthScene::default() };
        assert!(matches!(render_frame(&scene, 0), Err(SynthError::SceneOutOfFrame { .. })));
        let scene = SynthScene { distance_mm: 1.0, ..SynthScene::default() };
        assert!(matches!(render_frame(&scene, 0), Err(SynthError::InvalidScene(_))));
    }

    #[test]
    fn noise_is_seeded_per_frame() {
        let scene = SynthScene { noise_sigma: 5.0, ..SynthScene::default() };
        let a = render_frame(&scene, 3).unwrap().0;
        let b = render_frame(&scene, 3).unwrap().0;
        let c = render_frame(&scene, 4).unwrap().0;
        assert_eq!(a, b);
        assert_ne!(a.pixels, c.pixels);
        let other = SynthScene { seed: 2, ..scene };
        assert_ne!(render_frame(&other, 3).unwrap().0.pixels, a.pixels);
    }

    #[test]
    fn profile_steps_at_segment_start() {
        let scene = SynthScene {
            profile: vec![ProfileSegment::circular(0, 1.75), ProfileSegment::circular(10, 1.90)],
            ..SynthScene::default()
        };
        let w9 = scene.ground_truth(9).widths_px.unwrap().main;
        let w10 = scene.ground_truth(10).widths_px.unwrap().main;
        assert!((w10 / w9 - 1.90 / 1.75).abs() < 1e-12);
    }

    #[test]
    fn sequence_writes_frames_and_truth() {
        let dir = tempfile::tempdir().unwrap();
        let scene = SynthScene::default();
        let truth = render_sequence(&scene, 1, dir.path()).unwrap();
        let bytes = fs::read(dir.path().join(frame_file_name(0))).unwrap();
        let decoded = crate::acquisition::decode_frame(&bytes, 0, 1.0).unwrap();
        assert_eq!(decoded, render_frame(&scene, 0).unwrap().0);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("ground_truth.json")).unwrap()).unwrap();
        let f0 = &json["frames"][0];
        for key in ["index", "true_d_mm", "true_ovality_pct", "widths_px", "centers_px", "separation_px"] {
            assert!(f0.get(key).is_some(), "missing {key}");
        }
        assert!(f0["widths_px"]["upper"].is_number());
        assert_eq!(truth.frames.len(), 1);
        assert!(render_sequence(&scene, 0, dir.path()).is_err());
    }

    #[test]
    fn default_rig_fits_default_frame() {
        default_rig().validate_for(640, 480).unwrap();
    }
}
