//! Depth-weighted lifting of image-plane context features into a BEV grid.
//!
//! Every feature-map pixel `i` and depth bin `c` defines a frustum point: the
//! pixel center unprojected at depth `c` meters. Its ground-plane position
//! `(x, y)` selects a BEV cell, which receives `p_i[c] · ctx_i` by summation.
//! The `H × W × C_d × C_c` outer product is never materialized.
//!
//! Accumulation is deterministic: frustum points are bucketed per cell with
//! a stable counting sort, and each cell sums its contributions in
//! pixel-then-bin order, so the parallel result is bit-identical to a plain
//! sequential loop.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth_target::DepthBins;
use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::losses::DepthDistribution;

pub const DEFAULT_CONTEXT_CHANNELS: usize = 80;

/// Per-pixel context features, row-major `H × W × channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContextFeaturesRepr", into = "ContextFeaturesRepr")]
pub struct ContextFeatures {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ContextFeatures {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} context values for {height}×{width}×{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("context features"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Metric ground-plane extent; cells are half-open `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BevExtent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl From<[f64; 4]> for BevExtent {
    fn from([x_min, x_max, y_min, y_max]: [f64; 4]) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }
}

impl From<BevExtent> for [f64; 4] {
    fn from(e: BevExtent) -> Self {
        [e.x_min, e.x_max, e.y_min, e.y_max]
    }
}

/// Pooled BEV features. Rows index `x`, columns index `y`; `features` is
/// row-major `rows × cols × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    extent: BevExtent,
    rows: usize,
    cols: usize,
    channels: usize,
    features: Vec<f64>,
}

impl BevGrid {
    /// A zero-initialized grid.
    pub fn new(extent: BevExtent, rows: usize, cols: usize, channels: usize) -> Result<Self> {
        let e = extent;
        if ![e.x_min, e.x_max, e.y_min, e.y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("BEV extent"));
        }
        if !(e.x_max > e.x_min && e.y_max > e.y_min) {
            return Err(Error::param("extent", "max must exceed min on both axes"));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::param("resolution", "rows and cols must be at least 1"));
        }
        Ok(Self {
            extent,
            rows,
            cols,
            channels,
            features: vec![0.0; rows * cols * channels],
        })
    }

    /// A zeroed grid with the same geometry.
    pub fn empty_like(&self) -> Self {
        Self {
            features: vec![0.0; self.features.len()],
            ..self.clone()
        }
    }

    pub fn extent(&self) -> BevExtent {
        self.extent
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.cols + col) * self.channels;
        &self.features[i..i + self.channels]
    }

    /// Elementwise `self += other`; geometries must match.
    pub fn accumulate(&mut self, other: &BevGrid) -> Result<()> {
        if (self.extent, self.rows, self.cols, self.channels) != (other.extent, other.rows, other.cols, other.channels) {
            return Err(Error::ShapeMismatch("BEV grids differ in geometry".into()));
        }
        for (a, b) in self.features.iter_mut().zip(&other.features) {
            *a += b;
        }
        Ok(())
    }

    /// Writes the JSON header to `header` and the little-endian `f64`
    /// payload to the sibling path with extension `.bin`.
    pub fn write(&self, header: &Path) -> Result<PathBuf> {
        let payload = payload_path(header);
        let h = BevHeader {
            extent: self.extent,
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
        };
        fs::write(header, serde_json::to_vec_pretty(&h)?)?;
        let bytes: Vec<u8> = self.features.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&payload, bytes)?;
        Ok(payload)
    }

    pub fn read(header: &Path) -> Result<Self> {
        let h: BevHeader = serde_json::from_slice(&fs::read(header)?)?;
        let bytes = fs::read(payload_path(header))?;
        let mut grid = BevGrid::new(h.extent, h.rows, h.cols, h.channels)?;
        if bytes.len() != grid.features.len() * 8 {
            return Err(Error::ShapeMismatch(format!(
                "payload has {} bytes, header implies {}",
                bytes.len(),
                grid.features.len() * 8
            )));
        }
        for (v, chunk) in grid.features.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(grid)
    }
}

fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

#[derive(Serialize, Deserialize)]
struct BevHeader {
    extent: BevExtent,
    rows: usize,
    cols: usize,
    channels: usize,
}

/// Floor binning of `(x, y)` into `(row, col)`; `None` outside the extent.
pub fn bev_cell_of(grid: &BevGrid, x: f64, y: f64) -> Option<(usize, usize)> {
    let e = &grid.extent;
    let row = axis_cell(x, e.x_min, e.x_max, grid.rows)?;
    let col = axis_cell(y, e.y_min, e.y_max, grid.cols)?;
    Some((row, col))
}

fn axis_cell(v: f64, min: f64, max: f64, n: usize) -> Option<usize> {
    if !(v >= min && v < max) {
        return None;
    }
    let k = ((v - min) * n as f64 / (max - min)).floor() as usize;
    // rounding can push values just below `max` onto `n`
    Some(k.min(n - 1))
}

/// Continuous image coordinates of the center of feature cell `(row, col)`
/// on an `h × w` feature map.
pub fn pixel_center(cam: &CameraModel, grid: (usize, usize), row: usize, col: usize) -> (f64, f64) {
    let (img_h, img_w) = cam.image_size();
    let u = (col as f64 + 0.5) * img_w as f64 / grid.1 as f64;
    let v = (row as f64 + 0.5) * img_h as f64 / grid.0 as f64;
    (u, v)
}

fn check_inputs(pred: &DepthDistribution, ctx: &ContextFeatures, bins: DepthBins, grid: &BevGrid) -> Result<()> {
    if (pred.height(), pred.width()) != (ctx.height, ctx.width) {
        return Err(Error::ShapeMismatch(format!(
            "depth is {}×{}, context is {}×{}",
            pred.height(),
            pred.width(),
            ctx.height,
            ctx.width
        )));
    }
    if pred.num_bins() != bins.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "distribution has {} bins, expected {}",
            pred.num_bins(),
            bins.num_bins()
        )));
    }
    if ctx.channels != grid.channels {
        return Err(Error::ShapeMismatch(format!(
            "context has {} channels, grid has {}",
            ctx.channels, grid.channels
        )));
    }
    Ok(())
}

/// Lifts one camera view into a fresh grid shaped like `template`.
pub fn lift_to_bev(
    pred: &DepthDistribution,
    ctx: &ContextFeatures,
    cam: &CameraModel,
    bins: DepthBins,
    template: &BevGrid,
) -> Result<BevGrid> {
    check_inputs(pred, ctx, bins, template)?;
    let (h, w) = (pred.height(), pred.width());
    let nb = bins.num_bins();
    let mut out = template.empty_like();
    let n_cells = out.rows * out.cols;

    // cell of every frustum point, `usize::MAX` when dropped
    let cells: Vec<usize> = (0..h * w)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (u, v) = pixel_center(cam, (h, w), i / w, i % w);
            let ray = cam.ego_ray(u, v);
            let out = &out;
            (1..=nb).map(move |c| {
                let p = ray.at(bins.depth_of(c));
                bev_cell_of(out, p.x, p.y).map_or(usize::MAX, |(r, col)| r * out.cols + col)
            })
        })
        .collect();

    // stable counting sort of frustum points by cell
    let mut offsets = vec![0usize; n_cells + 1];
    for &cell in cells.iter().filter(|&&c| c != usize::MAX) {
        offsets[cell + 1] += 1;
    }
    for k in 0..n_cells {
        offsets[k + 1] += offsets[k];
    }
    let mut order = vec![0usize; offsets[n_cells]];
    let mut cursor = offsets.clone();
    for (point, &cell) in cells.iter().enumerate() {
        if cell != usize::MAX {
            order[cursor[cell]] = point;
            cursor[cell] += 1;
        }
    }

    let probs = pred.probs();
    let ch = out.channels;
    if ch == 0 {
        return Ok(out);
    }
    out.features.par_chunks_mut(ch).enumerate().for_each(|(cell, acc)| {
        for &point in &order[offsets[cell]..offsets[cell + 1]] {
            let weight = probs[point];
            let feat = ctx.pixel(point / nb);
            for (a, f) in acc.iter_mut().zip(feat) {
                *a += weight * f;
            }
        }
    });
    Ok(out)
}

/// One camera's inputs for multi-view lifting.
pub struct CameraView<'a> {
    pub pred: &'a DepthDistribution,
    pub ctx: &'a ContextFeatures,
    pub cam: &'a CameraModel,
}

/// Sum of the per-camera lifts on a shared grid.
pub fn lift_views(views: &[CameraView<'_>], bins: DepthBins, template: &BevGrid) -> Result<BevGrid> {
    let mut total = template.empty_like();
    for v in views {
        total.accumulate(&lift_to_bev(v.pred, v.ctx, v.cam, bins, template)?)?;
    }
    Ok(total)
}

#[derive(Serialize, Deserialize)]
struct ContextFeaturesRepr {
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    channels: usize,
    features: Vec<f64>,
}

impl TryFrom<ContextFeaturesRepr> for ContextFeatures {
    type Error = Error;

    fn try_from(r: ContextFeaturesRepr) -> Result<Self> {
        Self::new(r.height, r.width, r.channels, r.features)
    }
}

impl From<ContextFeatures> for ContextFeaturesRepr {
    fn from(c: ContextFeatures) -> Self {
        Self {
            height: c.height,
            width: c.width,
            channels: c.channels,
            features: c.data,
        }
    }
}
