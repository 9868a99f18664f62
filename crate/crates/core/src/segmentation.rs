//! Single-pixel slice segmentation.
//!
//! Every ROI column is a 1-D intensity profile crossing the filament. Edges
//! are where the forward difference `g[i] = I[i+1] - I[i]` reaches the
//! gradient threshold. Coordinates are continuous row positions where pixel
//! `i` covers `[i, i+1)`, so `g[i]` sits on the boundary `i + 1`.
//!
//! A threshold crossing only locates an edge to the pixel. The sub-pixel
//! position is the centroid of the gradient-magnitude lobe around the
//! crossing: for an area-sampled step the lobe is a unit tent centred on the
//! true edge, and its two non-zero samples interpolate the edge exactly.

use thiserror::Error;

use crate::acquisition::Strip;

pub const DEFAULT_GRADIENT_THRESHOLD: f64 = 40.0;
pub const SMOOTHING_WINDOW: usize = 5;
/// Minimum fraction of columns that must yield an edge pair.
pub const MIN_MASK_COVERAGE: f64 = 0.5;

/// Lobe samples below this fraction of the peak are not part of the edge.
const LOBE_FLOOR: f64 = 0.1;
/// Lobe half-width cap, in samples.
const LOBE_REACH: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("slice too short ({0} rows, need >= 3)")]
    SliceTooShort(usize),
    #[error("gradient threshold must be > 0")]
    BadThreshold,
    #[error("no filament edge pair in slice")]
    NoFilament,
    #[error("{0} candidate bands and no previous centerline")]
    AmbiguousBand(usize),
    #[error("only {present} of {total} columns yielded edges")]
    MaskTooSparse { present: usize, total: usize },
    #[error("column {column}: shift {shift:.2} px moves the band outside the strip")]
    ShiftOutOfRange { column: usize, shift: f64 },
    #[error("midline has {got} columns, strip has {expected}")]
    MidlineLength { got: usize, expected: usize },
}

/// Filament boundaries in one slice, in continuous row coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePair {
    pub top_edge: f64,
    pub bottom_edge: f64,
}

impl EdgePair {
    pub fn width_px(&self) -> f64 {
        self.bottom_edge - self.top_edge
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.top_edge + self.bottom_edge)
    }

    pub fn shifted(&self, by: f64) -> EdgePair {
        EdgePair { top_edge: self.top_edge + by, bottom_edge: self.bottom_edge + by }
    }
}

#[derive(Debug, Clone, Copy)]
struct EdgeEvent {
    /// First and last gradient index of the above-threshold run.
    first: usize,
    last: usize,
    positive: bool,
    position: f64,
}

fn forward_gradient(slice: &[f32]) -> Vec<f64> {
    slice.windows(2).map(|w| w[1] as f64 - w[0] as f64).collect()
}

/// Centroid of the same-signed, monotonically falling lobe around `peak`.
fn lobe_centroid(grad: &[f64], peak: usize) -> f64 {
    let peak_mag = grad[peak].abs();
    let positive = grad[peak] > 0.0;
    let in_lobe = |i: usize, towards: usize| {
        let g = grad[i];
        (g > 0.0) == positive && g != 0.0 && g.abs() <= grad[towards].abs() && g.abs() >= LOBE_FLOOR * peak_mag
    };
    let mut lo = peak;
    while lo > 0 && peak - lo < LOBE_REACH && in_lobe(lo - 1, lo) {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < grad.len() && hi - peak < LOBE_REACH && in_lobe(hi + 1, hi) {
        hi += 1;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, g) in grad.iter().enumerate().take(hi + 1).skip(lo) {
        num += g.abs() * (i + 1) as f64;
        den += g.abs();
    }
    num / den
}

fn edge_events(grad: &[f64], threshold: f64) -> Vec<EdgeEvent> {
    let mut events = Vec::new();
    let mut i = 0;
    while i < grad.len() {
        if grad[i].abs() < threshold {
            i += 1;
            continue;
        }
        let positive = grad[i] > 0.0;
        let first = i;
        let mut peak = i;
        while i + 1 < grad.len() && grad[i + 1].abs() >= threshold && (grad[i + 1] > 0.0) == positive {
            i += 1;
            if grad[i].abs() > grad[peak].abs() {
                peak = i;
            }
        }
        events.push(EdgeEvent { first, last: i, positive, position: lobe_centroid(grad, peak) });
        i += 1;
    }
    events
}

fn mean(values: &[f32]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64)
    }
}

/// Every filament band the slice supports. A band is a maximal run of
/// non-background segments between edge events whose bounding events have
/// opposite polarity.
fn candidate_bands(slice: &[f32], threshold: f64) -> Vec<EdgePair> {
    let grad = forward_gradient(slice);
    let events = edge_events(&grad, threshold);
    if events.len() < 2 {
        return Vec::new();
    }
    let (head, tail) = (events[0], events[events.len() - 1]);
    let background = match (mean(&slice[..=head.first]), mean(&slice[tail.last + 1..])) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (a, b) => a.or(b),
    };
    let is_background: Vec<bool> = events
        .windows(2)
        .map(|pair| {
            let inner = &slice[pair[0].last + 1..=pair[1].first];
            match (background, mean(inner)) {
                (Some(bg), Some(m)) => (m - bg).abs() < 0.5 * threshold,
                _ => false,
            }
        })
        .collect();

    let mut bands = Vec::new();
    let mut start = 0;
    while start < is_background.len() {
        if is_background[start] {
            start += 1;
            continue;
        }
        let mut end = start;
        while end + 1 < is_background.len() && !is_background[end + 1] {
            end += 1;
        }
        let (top, bottom) = (events[start], events[end + 1]);
        if top.positive != bottom.positive && bottom.position > top.position {
            bands.push(EdgePair { top_edge: top.position, bottom_edge: bottom.position });
        }
        start = end + 1;
    }
    bands
}

/// Finds the filament edge pair in one slice.
pub fn detect_edges(slice: &[f32], threshold: f64) -> Result<EdgePair, SegmentError> {
    detect_edges_near(slice, threshold, None)
}

/// Like [`detect_edges`], resolving multiple candidate bands by proximity of
/// their midpoint to `previous_center`.
pub fn detect_edges_near(
    slice: &[f32],
    threshold: f64,
    previous_center: Option<f64>,
) -> Result<EdgePair, SegmentError> {
    if slice.len() < 3 {
        return Err(SegmentError::SliceTooShort(slice.len()));
    }
    if !(threshold > 0.0) {
        return Err(SegmentError::BadThreshold);
    }
    let bands = candidate_bands(slice, threshold);
    match (bands.len(), previous_center) {
        (0, _) => Err(SegmentError::NoFilament),
        (1, _) => Ok(bands[0]),
        (_, Some(prev)) => Ok(nearest_band(&bands, prev)),
        (n, None) => Err(SegmentError::AmbiguousBand(n)),
    }
}

fn nearest_band(bands: &[EdgePair], center: f64) -> EdgePair {
    *bands
        .iter()
        .min_by(|a, b| (a.center() - center).abs().total_cmp(&(b.center() - center).abs()))
        .expect("non-empty band list")
}

/// Per-column edge pairs of one strip.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub height: usize,
    pub edges: Vec<Option<EdgePair>>,
}

impl EdgeMask {
    pub fn present(&self) -> usize {
        self.edges.iter().filter(|e| e.is_some()).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.edges.is_empty() {
            0.0
        } else {
            self.present() as f64 / self.edges.len() as f64
        }
    }
}

enum ColumnResult {
    Found(EdgePair),
    Ambiguous(Vec<EdgePair>),
    Absent,
}

/// Applies [`detect_edges`] to every column of `strip`.
pub fn build_mask(strip: &Strip<u8>, threshold: f64) -> Result<EdgeMask, SegmentError> {
    build_mask_with_hint(strip, threshold, None)
}

/// Applies [`detect_edges`] to every column. Ambiguous columns take the band
/// nearest the previous column's center; `hint` seeds that center for the
/// leading columns (e.g. from the previous frame).
pub fn build_mask_with_hint(strip: &Strip<u8>, threshold: f64, hint: Option<f64>) -> Result<EdgeMask, SegmentError> {
    if !(threshold > 0.0) {
        return Err(SegmentError::BadThreshold);
    }
    let mut column = vec![0f32; strip.height];
    let raw: Vec<ColumnResult> = strip
        .columns()
        .map(|col| {
            for (dst, &src) in column.iter_mut().zip(col) {
                *dst = src as f32;
            }
            if column.len() < 3 {
                return ColumnResult::Absent;
            }
            let bands = candidate_bands(&column, threshold);
            match bands.len() {
                0 => ColumnResult::Absent,
                1 => ColumnResult::Found(bands[0]),
                _ => ColumnResult::Ambiguous(bands),
            }
        })
        .collect();

    let mut edges: Vec<Option<EdgePair>> = vec![None; raw.len()];
    let mut prev = hint;
    let mut pending = Vec::new();
    for (c, result) in raw.iter().enumerate() {
        match result {
            ColumnResult::Found(pair) => {
                edges[c] = Some(*pair);
                if prev.is_none() {
                    // resolve leading ambiguous columns right-to-left
                    let mut center = pair.center();
                    for &p in pending.iter().rev() {
                        if let ColumnResult::Ambiguous(bands) = &raw[p] {
                            let pick = nearest_band(bands, center);
                            center = pick.center();
                            edges[p] = Some(pick);
                        }
                    }
                    pending.clear();
                }
                prev = Some(pair.center());
            }
            ColumnResult::Ambiguous(bands) => match prev {
                Some(center) => {
                    let pick = nearest_band(bands, center);
                    prev = Some(pick.center());
                    edges[c] = Some(pick);
                }
                None => pending.push(c),
            },
            ColumnResult::Absent => {}
        }
    }

    let mask = EdgeMask { height: strip.height, edges };
    let present = mask.present();
    if (present as f64) < MIN_MASK_COVERAGE * mask.edges.len() as f64 || present == 0 {
        return Err(SegmentError::MaskTooSparse { present, total: mask.edges.len() });
    }
    Ok(mask)
}

/// Raw per-column midpoints with absent columns linearly interpolated from
/// their nearest present neighbours (held constant past the ends).
pub fn raw_centerline(mask: &EdgeMask) -> Result<Vec<f64>, SegmentError> {
    let known: Vec<(usize, f64)> =
        mask.edges.iter().enumerate().filter_map(|(c, e)| e.map(|e| (c, e.center()))).collect();
    if known.is_empty() {
        return Err(SegmentError::MaskTooSparse { present: 0, total: mask.edges.len() });
    }
    let mut out = vec![0.0; mask.edges.len()];
    let mut k = 0;
    for (c, slot) in out.iter_mut().enumerate() {
        while k + 1 < known.len() && known[k + 1].0 <= c {
            k += 1;
        }
        let (c0, v0) = known[k];
        *slot = if c <= c0 || k + 1 == known.len() {
            v0
        } else {
            let (c1, v1) = known[k + 1];
            v0 + (v1 - v0) * (c - c0) as f64 / (c1 - c0) as f64
        };
    }
    Ok(out)
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|c| {
            let reach = half.min(c).min(n - 1 - c);
            let span = &values[c - reach..=c + reach];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// Smoothed midline of the filament in strip rows.
pub fn centerline(mask: &EdgeMask) -> Result<Vec<f64>, SegmentError> {
    Ok(smooth(&raw_centerline(mask)?, SMOOTHING_WINDOW))
}

/// A segmented strip together with its straightened copy.
#[derive(Debug, Clone)]
pub struct SlicedStrip {
    /// Edge pairs in original strip rows.
    pub edges: Vec<Option<EdgePair>>,
    /// Unsmoothed per-column midpoints, absent columns interpolated.
    pub centerline: Vec<f64>,
    /// Smoothed midline used for rectification.
    pub midline: Vec<f64>,
    /// Per-column resampling shift, `midline - target_row`.
    pub shifts: Vec<f64>,
    pub target_row: f64,
    pub rectified: Strip<f32>,
}

impl SlicedStrip {
    pub fn width(&self) -> usize {
        self.edges.len()
    }

    /// Edge pair of column `c` in rectified rows.
    pub fn rectified_edges(&self, c: usize) -> Option<EdgePair> {
        self.edges[c].map(|e| e.shifted(-self.shifts[c]))
    }
}

/// Linear interpolation of a column at continuous index `t`, clamped to the
/// end samples.
#[inline]
pub fn sample_linear(column: &[f32], t: f64) -> f32 {
    let last = column.len() - 1;
    if t <= 0.0 {
        return column[0];
    }
    if t >= last as f64 {
        return column[last];
    }
    let i = t.floor() as usize;
    let f = (t - i as f64) as f32;
    column[i] + f * (column[i + 1] - column[i])
}

/// Shifts every column so the midline lands on row `height / 2`.
pub fn rectify(strip: &Strip<u8>, mask: &EdgeMask, midline: &[f64]) -> Result<SlicedStrip, SegmentError> {
    if midline.len() != strip.width || mask.edges.len() != strip.width {
        return Err(SegmentError::MidlineLength { got: midline.len(), expected: strip.width });
    }
    let height = strip.height as f64;
    let target_row = height / 2.0;
    let shifts: Vec<f64> = midline.iter().map(|m| m - target_row).collect();
    for (c, (&shift, edge)) in shifts.iter().zip(&mask.edges).enumerate() {
        let outside = match edge {
            Some(e) => e.top_edge - shift < 0.0 || e.bottom_edge - shift > height,
            None => false,
        };
        if shift.abs() > height || outside {
            return Err(SegmentError::ShiftOutOfRange { column: c, shift });
        }
    }
    let mut data = Vec::with_capacity(strip.width * strip.height);
    let mut column = vec![0f32; strip.height];
    for (c, &shift) in shifts.iter().enumerate() {
        for (dst, &src) in column.iter_mut().zip(strip.column(c)) {
            *dst = src as f32;
        }
        data.extend((0..strip.height).map(|r| sample_linear(&column, r as f64 + shift)));
    }
    Ok(SlicedStrip {
        edges: mask.edges.clone(),
        centerline: raw_centerline(mask)?,
        midline: midline.to_vec(),
        shifts,
        target_row,
        rectified: Strip::from_columns(strip.width, strip.height, data),
    })
}

/// Mask, centerline and rectification in one pass.
pub fn slice_strip(strip: &Strip<u8>, threshold: f64, hint: Option<f64>) -> Result<SlicedStrip, SegmentError> {
    let mask = build_mask_with_hint(strip, threshold, hint)?;
    let midline = centerline(&mask)?;
    rectify(strip, &mask, &midline)
}
