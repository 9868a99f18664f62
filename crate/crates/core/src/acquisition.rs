//! Frame loading, rig configuration and ROI cropping.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{PerProjection, Projection};

pub const DEFAULT_WIDTH: usize = 640;
pub const DEFAULT_HEIGHT: usize = 480;
pub const DEFAULT_TOLERANCE_MM: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("cannot read frame {path}: {reason}")]
    FileUnreadable { path: PathBuf, reason: String },
    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),
    #[error("no image frames found in {0}")]
    EmptySequence(PathBuf),
    #[error("roi {roi:?} exceeds {width}x{height} frame")]
    RoiOutOfBounds { roi: Roi, width: usize, height: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid rig config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub index: u64,
    pub period_s: f64,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        index: u64,
        period_s: f64,
    ) -> Result<Self, AcquisitionError> {
        if width == 0 || height == 0 {
            return Err(AcquisitionError::InvalidFrame(format!("empty dimensions {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(AcquisitionError::InvalidFrame(format!("{} pixels for {width}x{height}", pixels.len())));
        }
        Ok(Self { width, height, pixels, index, period_s })
    }

    /// Uniform frame, mostly useful for tests.
    pub fn filled(width: usize, height: usize, value: u8, index: u64, period_s: f64) -> Self {
        Self { width, height, pixels: vec![value; width * height], index, period_s }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn full_roi(&self) -> Roi {
        Roi { x: 0, y: 0, w: self.width, h: self.height }
    }
}

/// Axis-aligned rectangle in frame coordinates. `w` is the number of
/// single-pixel slices the ROI yields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Roi {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }

    pub fn intersects(&self, other: &Roi) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

/// Fixed measurement geometry and thresholds for one physical rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigConfig {
    pub roi_main: Roi,
    pub roi_upper: Roi,
    pub roi_lower: Roi,
    pub gradient_threshold: f64,
    pub nominal_diameter_mm: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance_mm: f64,
    pub feed_rate_mm_s: f64,
    pub period_s: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE_MM
}

impl RigConfig {
    pub fn roi(&self, p: Projection) -> Roi {
        match p {
            Projection::Main => self.roi_main,
            Projection::Upper => self.roi_upper,
            Projection::Lower => self.roi_lower,
        }
    }

    pub fn rois(&self) -> PerProjection<Roi> {
        PerProjection::new(self.roi_main, self.roi_upper, self.roi_lower)
    }

    /// Checks the dimension-independent invariants.
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        let bad = |msg: String| Err(AcquisitionError::InvalidConfig(msg));
        for (p, roi) in self.rois().iter() {
            if roi.w == 0 || roi.h == 0 {
                return bad(format!("roi_{} is empty", p.name()));
            }
        }
        let rois = [self.roi_main, self.roi_upper, self.roi_lower];
        for i in 0..3 {
            for j in i + 1..3 {
                if rois[i].intersects(&rois[j]) {
                    return bad(format!(
                        "roi_{} overlaps roi_{}",
                        Projection::ALL[i].name(),
                        Projection::ALL[j].name()
                    ));
                }
            }
        }
        if !(self.gradient_threshold > 0.0) {
            return bad("gradient_threshold must be > 0".into());
        }
        if !(self.nominal_diameter_mm > 0.0) {
            return bad("nominal_diameter_mm must be > 0".into());
        }
        if !(self.tolerance_mm > 0.0) {
            return bad("tolerance_mm must be > 0".into());
        }
        if !(self.feed_rate_mm_s >= 0.0) || !(self.period_s > 0.0) {
            return bad("feed_rate_mm_s must be >= 0 and period_s > 0".into());
        }
        Ok(())
    }

    /// Checks the invariants plus frame bounds.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<(), AcquisitionError> {
        self.validate()?;
        for (_, roi) in self.rois().iter() {
            if !roi.fits(width, height) {
                return Err(AcquisitionError::RoiOutOfBounds { roi: *roi, width, height });
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AcquisitionError> {
        let cfg: RigConfig = serde_json::from_str(text).map_err(|e| AcquisitionError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AcquisitionError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// A cropped sub-image stored column-major, so each single-pixel slice is a
/// contiguous slice of `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strip<T = u8> {
    pub width: usize,
    pub height: usize,
    data: Vec<T>,
}

impl<T: Copy> Strip<T> {
    /// Builds a strip from column-major data.
    pub fn from_columns(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "strip data size mismatch");
        Self { width, height, data }
    }

    /// Builds a strip from a row-major closure.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for c in 0..width {
            for r in 0..height {
                data.push(f(c, r));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn column(&self, c: usize) -> &[T] {
        &self.data[c * self.height..(c + 1) * self.height]
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize) -> T {
        self.data[c * self.height + r]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.data.chunks_exact(self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

impl Strip<u8> {
    pub fn to_f32(&self) -> Strip<f32> {
        Strip { width: self.width, height: self.height, data: self.data.iter().map(|&v| v as f32).collect() }
    }
}

/// Crops `roi` out of `frame`, copying values unchanged.
pub fn extract_roi(frame: &Frame, roi: Roi) -> Result<Strip<u8>, AcquisitionError> {
    if !roi.fits(frame.width, frame.height) {
        return Err(AcquisitionError::RoiOutOfBounds { roi, width: frame.width, height: frame.height });
    }
    let mut data = Vec::with_capacity(roi.w * roi.h);
    for c in roi.x..roi.x + roi.w {
        for r in roi.y..roi.y + roi.h {
            data.push(frame.pixels[r * frame.width + c]);
        }
    }
    Ok(Strip { width: roi.w, height: roi.h, data })
}

/// Decodes an in-memory PNG or PGM raster into a grayscale frame.
///
/// Color inputs are reduced by the unweighted channel mean, rounded half-up;
/// alpha is ignored.
pub fn decode_frame(bytes: &[u8], index: u64, period_s: f64) -> Result<Frame, AcquisitionError> {
    let unreadable = |reason: String| AcquisitionError::FileUnreadable { path: PathBuf::from("<memory>"), reason };
    if bytes.is_empty() {
        return Err(unreadable("zero-byte input".into()));
    }
    let format =
        image::guess_format(bytes).map_err(|_| AcquisitionError::UnsupportedFormat("unrecognized header".into()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(AcquisitionError::UnsupportedFormat(format!("{format:?}")));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| unreadable(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(buf) => buf.pixels().map(|p| channel_mean(p.0)).collect(),
        DynamicImage::ImageRgba8(buf) => buf.pixels().map(|p| channel_mean([p.0[0], p.0[1], p.0[2]])).collect(),
        other => return Err(AcquisitionError::UnsupportedFormat(format!("{:?} pixels (8-bit only)", other.color()))),
    };
    Frame::new(width, height, pixels, index, period_s)
}

/// Mean of three channels rounded half-up.
#[inline]
pub fn channel_mean(rgb: [u8; 3]) -> u8 {
    let sum = rgb[0] as u32 + rgb[1] as u32 + rgb[2] as u32;
    ((2 * sum + 3) / 6) as u8
}

pub fn load_frame(path: &Path, index: u64, period_s: f64) -> Result<Frame, AcquisitionError> {
    let bytes = fs::read(path)
        .map_err(|e| AcquisitionError::FileUnreadable { path: path.to_path_buf(), reason: e.to_string() })?;
    decode_frame(&bytes, index, period_s).map_err(|e| match e {
        AcquisitionError::FileUnreadable { reason, .. } => {
            AcquisitionError::FileUnreadable { path: path.to_path_buf(), reason }
        }
        other => other,
    })
}

fn is_frame_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
}

/// Trailing decimal digits of the file stem, if any.
fn numeric_suffix(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    stem[stem.len() - digits..].parse().ok()
}

/// Lists frame files in `dir` ordered by numeric filename suffix, ties and
/// suffix-less names broken lexicographically.
pub fn scan_sequence(dir: &Path) -> Result<Vec<PathBuf>, AcquisitionError> {
    let mut paths: Vec<PathBuf> =
        fs::read_dir(dir)?.filter_map(|entry| entry.ok().map(|e| e.path())).filter(|p| is_frame_file(p)).collect();
    if paths.is_empty() {
        return Err(AcquisitionError::EmptySequence(dir.to_path_buf()));
    }
    paths.sort_by(|a, b| {
        let ka = numeric_suffix(a);
        let kb = numeric_suffix(b);
        ka.is_none().cmp(&kb.is_none()).then(ka.cmp(&kb)).then_with(|| a.file_name().cmp(&b.file_name()))
    });
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};
    use std::io::Cursor;

    fn png_bytes(img: DynamicImage) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn gray_png_passes_through() {
        let img = GrayImage::from_fn(640, 480, |x, y| image::Luma([((x + y) % 256) as u8]));
        let frame = decode_frame(&png_bytes(DynamicImage::ImageLuma8(img.clone())), 7, 1.0).unwrap();
        assert_eq!((frame.width, frame.height, frame.index), (640, 480, 7));
        assert_eq!(frame.pixels, img.into_raw());
    }

    #[test]
    fn rgb_reduced_by_channel_mean() {
        let mut img = RgbImage::new(2, 1);
        img.put_pixel(0, 0, image::Rgb([30, 60, 90]));
        img.put_pixel(1, 0, image::Rgb([255, 255, 255]));
        let frame = decode_frame(&png_bytes(DynamicImage::ImageRgb8(img)), 0, 1.0).unwrap();
        assert_eq!(frame.pixels, vec![60, 255]);
    }

    #[test]
    fn channel_mean_rounds_to_nearest() {
        assert_eq!(channel_mean([0, 0, 1]), 0);
        assert_eq!(channel_mean([0, 1, 1]), 1);
        assert_eq!(channel_mean([255, 255, 254]), 255);
    }

    #[test]
    fn zero_byte_file_is_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f0.png");
        fs::write(&path, b"").unwrap();
        assert!(matches!(load_frame(&path, 0, 1.0), Err(AcquisitionError::FileUnreadable { .. })));
        assert!(matches!(
            load_frame(&dir.path().join("missing.png"), 0, 1.0),
            Err(AcquisitionError::FileUnreadable { .. })
        ));
    }

    #[test]
    fn unknown_header_is_unsupported() {
        assert!(matches!(
            decode_frame(b"hello world, not an image", 0, 1.0),
            Err(AcquisitionError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn truncated_png_is_unreadable() {
        let bytes = png_bytes(DynamicImage::ImageLuma8(GrayImage::new(16, 16)));
        assert!(matches!(
            decode_frame(&bytes[..bytes.len() / 2], 0, 1.0),
            Err(AcquisitionError::FileUnreadable { .. })
        ));
    }

    #[test]
    fn pgm_p5_decodes() {
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let frame = decode_frame(&bytes, 0, 1.0).unwrap();
        assert_eq!((frame.width, frame.height), (3, 2));
        assert_eq!(frame.pixels, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn scan_orders_numerically_and_skips_non_images() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["f2.png", "f10.png", "f1.png", "notes.txt"] {
            fs::write(dir.path().join(name), b"x").unwrap();
        }
        let names: Vec<String> = scan_sequence(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["f1.png", "f2.png", "f10.png"]);
    }

    #[test]
    fn scan_of_empty_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("notes.txt"), b"x").unwrap();
        assert!(matches!(scan_sequence(dir.path()), Err(AcquisitionError::EmptySequence(_))));
    }

    #[test]
    fn roi_crops() {
        let frame = Frame::new(4, 3, (0..12).collect(), 0, 1.0).unwrap();
        let full = extract_roi(&frame, frame.full_roi()).unwrap();
        for c in 0..4 {
            for r in 0..3 {
                assert_eq!(full.get(c, r), frame.get(c, r));
            }
        }
        let point = extract_roi(&frame, Roi::new(2, 1, 1, 1)).unwrap();
        assert_eq!(point.data(), &[frame.get(2, 1)]);
        assert!(matches!(extract_roi(&frame, Roi::new(2, 0, 3, 1)), Err(AcquisitionError::RoiOutOfBounds { .. })));
    }

    fn rig() -> RigConfig {
        RigConfig {
            roi_main: Roi::new(0, 40, 10, 20),
            roi_upper: Roi::new(0, 0, 10, 20),
            roi_lower: Roi::new(0, 70, 10, 20),
            gradient_threshold: 40.0,
            nominal_diameter_mm: 1.75,
            tolerance_mm: 0.05,
            feed_rate_mm_s: 10.0,
            period_s: 1.0,
        }
    }

    #[test]
    fn rig_json_keys_and_default_tolerance() {
        let text = r#"{"roi_main":{"x":0,"y":40,"w":10,"h":20},
            "roi_upper":{"x":0,"y":0,"w":10,"h":20},
            "roi_lower":{"x":0,"y":70,"w":10,"h":20},
            "gradient_threshold":40,"nominal_diameter_mm":1.75,
            "feed_rate_mm_s":10,"period_s":1}"#;
        assert_eq!(RigConfig::from_json(text).unwrap(), rig());
        let extra = text.replace("\"period_s\":1", "\"period_s\":1,\"bogus\":2");
        assert!(RigConfig::from_json(&extra).is_err());
    }

    #[test]
    fn rig_rejects_overlap_and_out_of_bounds() {
        let mut cfg = rig();
        cfg.roi_upper = Roi::new(0, 30, 10, 20);
        assert!(cfg.validate().is_err());
        let cfg = rig();
        assert!(cfg.validate_for(10, 90).is_ok());
        assert!(matches!(cfg.validate_for(10, 80), Err(AcquisitionError::RoiOutOfBounds { .. })));
        let mut cfg = rig();
        cfg.tolerance_mm = 0.0;
        assert!(cfg.validate().is_err());
    }
}
