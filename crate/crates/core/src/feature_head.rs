//! Post-processing for a SuperPoint-style decoder.
//!
//! The detection head emits 65 logits per 8x8 cell: 64 pixel positions in
//! row-major order plus a trailing "no interest point" dustbin. Softmax over
//! the 65 channels followed by a depth-to-space shuffle gives a
//! full-resolution heatmap. The descriptor head emits a coarse `Hc x Wc x D`
//! grid which is sampled at keypoint locations with Catmull-Rom bicubic
//! interpolation and L2 normalised.

use crate::error::{Error, Result};
use crate::par;

/// Side length of one detection cell in pixels.
pub const CELL: usize = 8;
/// Channels per detection cell: 64 positions plus the dustbin.
pub const DETECTION_CHANNELS: usize = CELL * CELL + 1;
/// Index of the dustbin channel.
pub const DUSTBIN: usize = CELL * CELL;

/// Default keypoint budget.
pub const DEFAULT_MAX_KEYPOINTS: usize = 8081;
/// Default detection threshold, applied to post-softmax probabilities.
pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.001023349;
/// Default non-maximum suppression radius (Chebyshev, pixels).
pub const DEFAULT_NMS_RADIUS: usize = 4;

/// Raw detection logits laid out as `[Hc][Wc][65]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionTensor {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl DetectionTensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "detection tensor needs at least one cell".into(),
            ));
        }
        let expected = rows * cols * DETECTION_CHANNELS;
        if data.len() != expected {
            return Err(Error::LengthMismatch(data.len(), expected));
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero logits for an image of `height x width` pixels. Both sides
    /// must be multiples of the cell size.
    pub fn zeros_for_image(height: usize, width: usize) -> Result<Self> {
        if !height.is_multiple_of(CELL) || !width.is_multiple_of(CELL) {
            return Err(Error::InvalidArgument(format!(
                "image size {height}x{width} is not a multiple of {CELL}"
            )));
        }
        let (rows, cols) = (height / CELL, width / CELL);
        Self::new(rows, cols, vec![0.0; rows * cols * DETECTION_CHANNELS])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f32] {
        let start = (r * self.cols + c) * DETECTION_CHANNELS;
        &self.data[start..start + DETECTION_CHANNELS]
    }

    pub fn cell_mut(&mut self, r: usize, c: usize) -> &mut [f32] {
        let start = (r * self.cols + c) * DETECTION_CHANNELS;
        &mut self.data[start..start + DETECTION_CHANNELS]
    }
}

/// Full-resolution interest-point probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    data: Vec<f32>,
    /// Dustbin probability per source cell, row-major over `[Hc][Wc]`.
    dustbin: Vec<f32>,
}

impl Heatmap {
    /// Builds a heatmap directly from pixel scores, with no dustbin mass.
    pub fn from_scores(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::LengthMismatch(data.len(), height * width));
        }
        let cells = height.div_ceil(CELL) * width.div_ceil(CELL);
        Ok(Self {
            height,
            width,
            data,
            dustbin: vec![0.0; cells],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn dustbin(&self) -> &[f32] {
        &self.dustbin
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// A detected interest point with an optional local frame.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    /// Characteristic scale in pixels.
    pub scale: f64,
    /// Radians in `[-pi, pi)`.
    pub orientation: f64,
    /// Local affine shape, row-major.
    pub affine: [[f64; 2]; 2],
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Self {
            x,
            y,
            score,
            scale: 1.0,
            orientation: 0.0,
            affine: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn with_frame(mut self, scale: f64, orientation: f64) -> Self {
        self.scale = scale;
        self.orientation = orientation;
        self
    }

    /// True when scale or orientation differ from their defaults.
    pub fn has_frame(&self) -> bool {
        self.scale != 1.0 || self.orientation != 0.0
    }

    pub fn affine_det(&self) -> f64 {
        self.affine[0][0] * self.affine[1][1] - self.affine[0][1] * self.affine[1][0]
    }
}

/// Coarse dense descriptors laid out as `[Hc][Wc][D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDescriptorTensor {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f32>,
}

impl DenseDescriptorTensor {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "descriptor tensor dimensions must be positive".into(),
            ));
        }
        if data.len() != rows * cols * dim {
            return Err(Error::LengthMismatch(data.len(), rows * cols * dim));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn cell(&self, r: usize, c: usize) -> &[f32] {
        let start = (r * self.cols + c) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Row-aligned unit-norm local descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDescriptorSet {
    dim: usize,
    data: Vec<f32>,
}

/// Tolerance on the L2 norm of a descriptor row.
pub const UNIT_NORM_TOL: f64 = 1e-5;

impl LocalDescriptorSet {
    /// Wraps rows that are already unit-norm.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::check_shape(dim, &data)?;
        for (i, row) in data.chunks(dim).enumerate() {
            let norm = l2_norm(row);
            if !norm.is_finite() {
                return Err(Error::NonFinite("descriptor"));
            }
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "descriptor row {i} has norm {norm}, expected unit norm"
                )));
            }
        }
        Ok(Self { dim, data })
    }

    /// L2-normalises every row.
    pub fn normalized(dim: usize, mut data: Vec<f32>) -> Result<Self> {
        Self::check_shape(dim, &data)?;
        for (i, row) in data.chunks_mut(dim).enumerate() {
            normalize_row(row).ok_or(Error::DegenerateDescriptor(i))?;
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    fn check_shape(dim: usize, data: &[f32]) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidArgument("descriptor dimension is zero".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch(data.len(), dim));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Normalises in place; `None` for a zero or non-finite row.
fn normalize_row(row: &mut [f32]) -> Option<()> {
    let norm = l2_norm(row);
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for v in row.iter_mut() {
        *v = (f64::from(*v) / norm) as f32;
    }
    Some(())
}

/// Softmax over each cell's 65 logits, dustbin dropped, shuffled to pixels.
///
/// Channel `k < 64` of cell `(r, c)` lands on pixel `(8r + k / 8, 8c + k % 8)`.
pub fn decode_heatmap(t: &DetectionTensor) -> Result<Heatmap> {
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("detection logits"));
    }
    let (rows, cols) = (t.rows, t.cols);
    let (height, width) = (rows * CELL, cols * CELL);

    // one band of 8 pixel rows per cell row
    let bands: Vec<(Vec<f32>, Vec<f32>)> = par::map_range(rows, |r| {
        let mut band = vec![0f32; CELL * width];
        let mut dust = vec![0f32; cols];
        let mut probs = [0f64; DETECTION_CHANNELS];
        for c in 0..cols {
            let logits = t.cell(r, c);
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
            let mut total = 0.0;
            for (p, &l) in probs.iter_mut().zip(logits) {
                *p = (f64::from(l) - max).exp();
                total += *p;
            }
            for (k, p) in probs.iter().take(DUSTBIN).enumerate() {
                let (dy, dx) = (k / CELL, k % CELL);
                band[dy * width + c * CELL + dx] = (p / total) as f32;
            }
            dust[c] = (probs[DUSTBIN] / total) as f32;
        }
        (band, dust)
    });

    let mut data = Vec::with_capacity(height * width);
    let mut dustbin = Vec::with_capacity(rows * cols);
    for (band, dust) in bands {
        data.extend_from_slice(&band);
        dustbin.extend_from_slice(&dust);
    }
    Ok(Heatmap {
        height,
        width,
        data,
        dustbin,
    })
}

/// Thresholds, suppresses and ranks heatmap peaks.
///
/// Candidates are visited in descending score order (ties by `(y, x)`); a
/// candidate is kept unless it lies within Chebyshev distance `nms_radius`
/// of an already-kept pixel. At most `k_max` keypoints are returned.
pub fn extract_keypoints(
    h: &Heatmap,
    threshold: f64,
    k_max: usize,
    nms_radius: usize,
) -> Vec<Keypoint> {
    let mut candidates: Vec<(f32, usize)> = h
        .data
        .iter()
        .enumerate()
        .filter(|(_, &s)| f64::from(s) >= threshold)
        .map(|(i, &s)| (s, i))
        .collect();
    // pixel index order is (y, x) order
    candidates.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let (height, width) = (h.height, h.width);
    let mut suppressed = vec![false; height * width];
    let mut out = Vec::new();
    for (score, idx) in candidates {
        if out.len() >= k_max {
            break;
        }
        if suppressed[idx] {
            continue;
        }
        let (y, x) = (idx / width, idx % width);
        out.push(Keypoint::new(x as f64, y as f64, f64::from(score)));
        if nms_radius > 0 {
            let (y0, y1) = (y.saturating_sub(nms_radius), (y + nms_radius).min(height - 1));
            let (x0, x1) = (x.saturating_sub(nms_radius), (x + nms_radius).min(width - 1));
            for yy in y0..=y1 {
                suppressed[yy * width + x0..=yy * width + x1].fill(true);
            }
        }
    }
    out
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
pub fn catmull_rom(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Taps and weights along one axis for continuous grid coordinate `u`.
fn axis_taps(u: f64, len: usize) -> [(usize, f64); 4] {
    let base = u.floor();
    let frac = u - base;
    let last = len as i64 - 1;
    let mut taps = [(0usize, 0f64); 4];
    for (slot, off) in taps.iter_mut().zip(-1i64..=2) {
        let idx = (base as i64 + off).clamp(0, last) as usize;
        *slot = (idx, catmull_rom(frac - off as f64));
    }
    taps
}

/// Bicubically samples the descriptor grid at each keypoint and normalises.
///
/// Pixel `(x, y)` maps to grid coordinate `((x + 0.5) / 8 - 0.5, (y + 0.5) / 8 - 0.5)`;
/// out-of-range taps clamp to the border cell.
pub fn sample_descriptors(
    d: &DenseDescriptorTensor,
    kps: &[Keypoint],
) -> Result<LocalDescriptorSet> {
    let (height, width) = (d.rows * CELL, d.cols * CELL);
    for (index, kp) in kps.iter().enumerate() {
        let inside = kp.x >= 0.0 && kp.y >= 0.0 && kp.x < width as f64 && kp.y < height as f64;
        if !inside {
            return Err(Error::OutOfFrame {
                index,
                x: kp.x,
                y: kp.y,
                width,
                height,
            });
        }
    }

    let dim = d.dim;
    let rows: Vec<Result<Vec<f32>>> = par::map_slice(kps, |(i, kp)| {
        let u = (kp.x + 0.5) / CELL as f64 - 0.5;
        let v = (kp.y + 0.5) / CELL as f64 - 0.5;
        let tx = axis_taps(u, d.cols);
        let ty = axis_taps(v, d.rows);
        let mut acc = vec![0f64; dim];
        for &(r, wy) in &ty {
            if wy == 0.0 {
                continue;
            }
            for &(c, wx) in &tx {
                let w = wy * wx;
                if w == 0.0 {
                    continue;
                }
                for (a, &val) in acc.iter_mut().zip(d.cell(r, c)) {
                    *a += w * f64::from(val);
                }
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateDescriptor(i));
        }
        Ok(acc.into_iter().map(|v| (v / norm) as f32).collect())
    });

    let mut data = Vec::with_capacity(kps.len() * dim);
    for row in rows {
        data.extend(row?);
    }
    Ok(LocalDescriptorSet { dim, data })
}
