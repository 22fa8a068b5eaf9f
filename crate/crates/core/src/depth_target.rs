//! Sparse categorical depth ground truth from projected point clouds.
//!
//! Bins are integer meters `1..=num_bins`. A point lands in the cell
//! `(floor(v · H / image_height), floor(u · W / image_width))` and is binned by
//! rounding its depth to the nearest meter. Points with depth outside
//! `[0.5, num_bins + 0.5)` are dropped. When several points share a cell the
//! nearest one wins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraModel, Point3};

pub const DEFAULT_NUM_BINS: usize = 118;

/// Bin value stored for cells without a projected point.
pub const UNSET_BIN: u32 = 0;

/// Integer-meter depth hypotheses `1..=num_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthBins {
    num_bins: usize,
}

impl DepthBins {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::param("num_bins", format!("need at least 2 bins, got {num_bins}")));
        }
        Ok(Self { num_bins })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Depth in meters represented by 1-based bin `c`.
    pub fn depth_of(&self, c: usize) -> f64 {
        c as f64
    }

    /// Nearest bin for a depth, or `None` when the depth falls outside
    /// `[0.5, num_bins + 0.5)`.
    pub fn bin_of(&self, d: f64) -> Option<u32> {
        if !(d >= 0.5 && d < self.num_bins as f64 + 0.5) {
            return None;
        }
        let c = d.round().clamp(1.0, self.num_bins as f64);
        Some(c as u32)
    }
}

impl Default for DepthBins {
    fn default() -> Self {
        Self {
            num_bins: DEFAULT_NUM_BINS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("point cloud"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-cell ground-truth bins and validity mask on an `H × W` grid,
/// both row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SparseDepthTargetRepr", into = "SparseDepthTargetRepr")]
pub struct SparseDepthTarget {
    height: usize,
    width: usize,
    num_bins: usize,
    bins: Vec<u32>,
    mask: Vec<bool>,
}

impl SparseDepthTarget {
    /// An all-unmasked target.
    pub fn empty(height: usize, width: usize, num_bins: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            num_bins,
            bins: vec![UNSET_BIN; n],
            mask: vec![false; n],
        }
    }

    /// Builds a target from a bin map where [`UNSET_BIN`] marks unmasked cells.
    pub fn from_bins(height: usize, width: usize, num_bins: usize, bins: Vec<u32>) -> Result<Self> {
        if bins.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "bin map has {} entries, expected {height}×{width}",
                bins.len()
            )));
        }
        if let Some(b) = bins.iter().find(|&&b| b as usize > num_bins) {
            return Err(Error::param("bins", format!("bin {b} exceeds num_bins {num_bins}")));
        }
        let mask = bins.iter().map(|&b| b != UNSET_BIN).collect();
        Ok(Self {
            height,
            width,
            num_bins,
            bins,
            mask,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn bins(&self) -> &[u32] {
        &self.bins
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.get(i).copied().unwrap_or(false)
    }

    /// `|M|`, the number of supervised cells.
    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Ground-truth depth (bin value in meters) at a masked cell.
    pub fn depth_at(&self, i: usize) -> Option<f64> {
        self.is_masked(i).then(|| self.bins[i] as f64)
    }
}

/// Projects every point and keeps, per cell, the bin of the nearest point.
pub fn build_sparse_depth_target(
    cloud: &PointCloud,
    cam: &CameraModel,
    bins: DepthBins,
    grid: (usize, usize),
) -> Result<SparseDepthTarget> {
    let (height, width) = grid;
    if height == 0 || width == 0 {
        return Err(Error::param("grid", "dimensions must be at least 1"));
    }
    let (img_h, img_w) = cam.image_size();
    let sx = width as f64 / img_w as f64;
    let sy = height as f64 / img_h as f64;

    let mut nearest = vec![f64::INFINITY; height * width];
    for p in &cloud.points {
        let Some(pd) = project(cam, *p) else { continue };
        if bins.bin_of(pd.d).is_none() {
            continue;
        }
        let (cu, cv) = ((pd.u * sx).floor(), (pd.v * sy).floor());
        if !(cu >= 0.0 && cv >= 0.0 && cu < width as f64 && cv < height as f64) {
            continue;
        }
        let i = cv as usize * width + cu as usize;
        if pd.d < nearest[i] {
            nearest[i] = pd.d;
        }
    }

    let mut target = SparseDepthTarget::empty(height, width, bins.num_bins());
    for (i, d) in nearest.into_iter().enumerate() {
        if let Some(b) = bins.bin_of(d) {
            target.bins[i] = b;
            target.mask[i] = true;
        }
    }
    Ok(target)
}

/// One-hot ground-truth distribution at cell `i`; index `c - 1` holds bin `c`.
pub fn one_hot(target: &SparseDepthTarget, i: usize) -> Result<Vec<f64>> {
    if !target.is_masked(i) {
        return Err(Error::Unmasked(i));
    }
    let mut v = vec![0.0; target.num_bins];
    v[target.bins[i] as usize - 1] = 1.0;
    Ok(v)
}

#[derive(Serialize, Deserialize)]
struct SparseDepthTargetRepr {
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    num_bins: usize,
    bins: Vec<u32>,
    mask: Vec<u8>,
}

impl TryFrom<SparseDepthTargetRepr> for SparseDepthTarget {
    type Error = Error;

    fn try_from(r: SparseDepthTargetRepr) -> Result<Self> {
        let n = r.height * r.width;
        if r.bins.len() != n || r.mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "target arrays must have {n} entries (bins {}, mask {})",
                r.bins.len(),
                r.mask.len()
            )));
        }
        let mut mask = Vec::with_capacity(n);
        for (&m, &b) in r.mask.iter().zip(&r.bins) {
            let valid = match m {
                0 => b == UNSET_BIN,
                1 => b >= 1 && b as usize <= r.num_bins,
                _ => false,
            };
            if !valid {
                return Err(Error::param("target", format!("inconsistent cell (mask {m}, bin {b})")));
            }
            mask.push(m == 1);
        }
        Ok(Self {
            height: r.height,
            width: r.width,
            num_bins: r.num_bins,
            bins: r.bins,
            mask,
        })
    }
}

impl From<SparseDepthTarget> for SparseDepthTargetRepr {
    fn from(t: SparseDepthTarget) -> Self {
        Self {
            height: t.height,
            width: t.width,
            num_bins: t.num_bins,
            mask: t.mask.iter().map(|&m| m as u8).collect(),
            bins: t.bins,
        }
    }
}
