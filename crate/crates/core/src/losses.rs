//! Depth supervision losses with analytic gradients w.r.t. depth logits.
//!
//! * [`absolute_depth_loss`]: masked pixel-wise cross-entropy on depth bins.
//! * [`expected_depth`]: per-pixel depth `Σ_c c · p[c]`.
//! * [`relative_depth`] / [`normalize_relative`]: signed pairwise depth
//!   differences and their temperature-scaled row softmax `exp(-|R|/τ)`.
//! * [`relative_depth_loss`]: KL divergence between ground-truth and predicted
//!   normalized maps, averaged over all `n²` entries.
//! * [`patched_relative_depth_loss`]: the same loss over sliding `p × p`
//!   windows, chained through the expected depth into the logits.
//!
//! Tensors are flat row-major `H × W × num_bins` buffers; pixel `i` owns the
//! slice `[i * num_bins, (i + 1) * num_bins)` and bin `c` sits at offset `c - 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depth_target::SparseDepthTarget;
use crate::error::{Error, Result};

pub const DEFAULT_PATCH_SIZE: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 8.0;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BETA: f64 = 1.0;

/// Per-pixel categorical distribution over depth bins, parameterized by logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DepthDistributionRepr", into = "DepthDistributionRepr")]
pub struct DepthDistribution {
    height: usize,
    width: usize,
    num_bins: usize,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl DepthDistribution {
    pub fn from_logits(height: usize, width: usize, num_bins: usize, logits: Vec<f64>) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::param("num_bins", "must be positive"));
        }
        if logits.len() != height * width * num_bins {
            return Err(Error::ShapeMismatch(format!(
                "{} logits for a {height}×{width}×{num_bins} distribution",
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        let mut probs = vec![0.0; logits.len()];
        for (l, p) in logits.chunks_exact(num_bins).zip(probs.chunks_exact_mut(num_bins)) {
            softmax_into(l, p);
        }
        Ok(Self {
            height,
            width,
            num_bins,
            logits,
            probs,
        })
    }

    /// Zero logits, i.e. uniform over all bins.
    pub fn uniform(height: usize, width: usize, num_bins: usize) -> Result<Self> {
        Self::from_logits(height, width, num_bins, vec![0.0; height * width * num_bins])
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

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel_logits(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_bins..(i + 1) * self.num_bins]
    }

    pub fn pixel_probs(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_bins..(i + 1) * self.num_bins]
    }

    fn check_target(&self, target: &SparseDepthTarget) -> Result<()> {
        if (self.height, self.width, self.num_bins) != (target.height(), target.width(), target.num_bins()) {
            return Err(Error::ShapeMismatch(format!(
                "prediction is {}×{}×{}, target is {}×{}×{}",
                self.height,
                self.width,
                self.num_bins,
                target.height(),
                target.width(),
                target.num_bins()
            )));
        }
        Ok(())
    }
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Numerically stable `ln Σ exp(x)`.
fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A scalar loss and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Masked cross-entropy between predicted bins and one-hot ground truth,
/// averaged over `|M|`. The gradient w.r.t. logits is `(p - onehot) / |M|`
/// on masked pixels and zero elsewhere. An empty mask gives zero loss.
pub fn absolute_depth_loss(pred: &DepthDistribution, target: &SparseDepthTarget) -> Result<LossGrad> {
    pred.check_target(target)?;
    let c = pred.num_bins;
    let mut grad = vec![0.0; pred.logits.len()];
    let count = target.mask_count();
    if count == 0 {
        return Ok(LossGrad { loss: 0.0, grad });
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for i in (0..pred.num_pixels()).filter(|&i| target.is_masked(i)) {
        let b = target.bins()[i] as usize - 1;
        let logits = pred.pixel_logits(i);
        loss += log_sum_exp(logits.iter().copied()) - logits[b];
        let g = &mut grad[i * c..(i + 1) * c];
        for (g, &p) in g.iter_mut().zip(pred.pixel_probs(i)) {
            *g = p * scale;
        }
        g[b] -= scale;
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad,
    })
}

/// Expected depth `Σ_c c · p[c]` per pixel.
///
/// Evaluated as `Σ c·w_c / Σ w_c` over the shifted exponentials
/// `w_c = exp(l_c - max l)`, so uniform and saturated one-hot logits give
/// exact results.
pub fn expected_depth(pred: &DepthDistribution) -> Vec<f64> {
    pred.logits
        .chunks_exact(pred.num_bins)
        .map(|l| {
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for (k, &x) in l.iter().enumerate() {
                let w = (x - max).exp();
                num += (k + 1) as f64 * w;
                den += w;
            }
            num / den
        })
        .collect()
}

/// Square `n × n` row-major matrix of pairwise depth relations.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDepthMap {
    n: usize,
    values: Vec<f64>,
}

impl RelativeDepthMap {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.n..(j + 1) * self.n]
    }
}

/// Signed differences `R[j][k] = depth[j] - depth[k]`.
pub fn relative_depth(depths: &[f64]) -> Result<RelativeDepthMap> {
    let n = depths.len();
    if n < 2 {
        return Err(Error::param("depths", format!("need at least 2 pixels, got {n}")));
    }
    let values = depths
        .iter()
        .flat_map(|&a| depths.iter().map(move |&b| a - b))
        .collect();
    Ok(RelativeDepthMap { n, values })
}

/// Row-wise softmax of `-|R| / τ`: nearer pairs get higher weight and every
/// row sums to one.
pub fn normalize_relative(raw: &RelativeDepthMap, tau: f64) -> Result<RelativeDepthMap> {
    check_temperature(tau)?;
    let n = raw.n;
    let mut values = Vec::with_capacity(n * n);
    for j in 0..n {
        let row = raw.row(j);
        let lse = log_sum_exp(row.iter().map(|r| -r.abs() / tau));
        values.extend(row.iter().map(|r| (-r.abs() / tau - lse).exp()));
    }
    Ok(RelativeDepthMap { n, values })
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param("temperature", format!("must be positive and finite, got {tau}")));
    }
    Ok(())
}

/// Log of the normalized relative-depth map, computed in log space.
fn log_normalized(depths: &[f64], tau: f64) -> Vec<f64> {
    let n = depths.len();
    let mut out = Vec::with_capacity(n * n);
    for &a in depths {
        let logits = depths.iter().map(move |&b| -(a - b).abs() / tau);
        let lse = log_sum_exp(logits.clone());
        out.extend(logits.map(|x| x - lse));
    }
    out
}

/// KL divergence between the normalized relative-depth maps of the ground
/// truth and the prediction, averaged over all `n²` entries. The gradient is
/// w.r.t. the predicted depths.
pub fn relative_depth_loss(pred: &[f64], gt: &[f64], tau: f64) -> Result<LossGrad> {
    let n = pred.len();
    if gt.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} predicted vs {} ground-truth depths", gt.len())));
    }
    if n < 2 {
        return Err(Error::param("depths", format!("need at least 2 pixels, got {n}")));
    }
    check_temperature(tau)?;
    if pred.iter().chain(gt).any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("depths"));
    }

    let log_g = log_normalized(gt, tau);
    let log_p = log_normalized(pred, tau);
    let scale = 1.0 / (n * n) as f64;

    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for j in 0..n {
        for k in 0..n {
            let idx = j * n + k;
            let g = log_g[idx].exp();
            if g > 0.0 {
                loss += g * (log_g[idx] - log_p[idx]);
            }
            // d loss / d r_jk with r_jk = pred_j - pred_k
            let r = pred[j] - pred[k];
            let d = scale * (g - log_p[idx].exp()) * sign(r) / tau;
            grad[j] += d;
            grad[k] -= d;
        }
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sliding-window settings for the relative-depth loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub stride: usize,
    /// Temperature `τ` in meters.
    pub temperature: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_PATCH_SIZE,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::param("patch_size", "must be at least 2"));
        }
        if self.stride == 0 {
            return Err(Error::param("stride", "must be at least 1"));
        }
        check_temperature(self.temperature)
    }

    /// Top-left corners of every window that fits inside an `h × w` grid.
    pub fn windows(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        if self.patch_size > h || self.patch_size > w {
            return Vec::new();
        }
        let rows = (0..=h - self.patch_size).step_by(self.stride);
        rows.flat_map(|r| (0..=w - self.patch_size).step_by(self.stride).map(move |c| (r, c)))
            .collect()
    }
}

/// Patched loss, its gradient on logits, and how many windows contributed.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchedLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub patches: usize,
}

/// Relative-depth loss averaged over sliding `p × p` windows.
///
/// Each window keeps only its masked pixels (row-major order) and is skipped
/// when fewer than two remain. Predicted depths are the expected depths of
/// all pixels; ground truth is the target bin value. The loss is the mean
/// over contributing windows.
pub fn patched_relative_depth_loss(
    pred: &DepthDistribution,
    target: &SparseDepthTarget,
    cfg: &PatchConfig,
) -> Result<PatchedLoss> {
    cfg.validate()?;
    pred.check_target(target)?;
    let (h, w) = (pred.height, pred.width);
    if cfg.patch_size > h.min(w) {
        return Err(Error::param(
            "patch_size",
            format!("{} exceeds the {h}×{w} grid", cfg.patch_size),
        ));
    }

    let depth = expected_depth(pred);
    // (loss, pixel indices, d loss / d expected depth) per contributing window
    type WindowTerm = (f64, Vec<usize>, Vec<f64>);
    let per_patch: Vec<Option<WindowTerm>> = cfg
        .windows(h, w)
        .into_par_iter()
        .map(|(r0, c0)| {
            let idx: Vec<usize> = (r0..r0 + cfg.patch_size)
                .flat_map(|r| (c0..c0 + cfg.patch_size).map(move |c| r * w + c))
                .filter(|&i| target.is_masked(i))
                .collect();
            if idx.len() < 2 {
                return Ok(None);
            }
            let p: Vec<f64> = idx.iter().map(|&i| depth[i]).collect();
            let g: Vec<f64> = idx.iter().map(|&i| target.bins()[i] as f64).collect();
            let lg = relative_depth_loss(&p, &g, cfg.temperature)?;
            Ok(Some((lg.loss, idx, lg.grad)))
        })
        .collect::<Result<_>>()?;

    let mut grad = vec![0.0; pred.logits.len()];
    let patches = per_patch.iter().flatten().count();
    if patches == 0 {
        return Ok(PatchedLoss { loss: 0.0, grad, patches });
    }
    let scale = 1.0 / patches as f64;

    let mut loss = 0.0;
    let mut depth_grad = vec![0.0; depth.len()];
    for (l, idx, g) in per_patch.into_iter().flatten() {
        loss += l;
        for (i, gi) in idx.into_iter().zip(g) {
            depth_grad[i] += gi * scale;
        }
    }

    // d E_i / d l_ic = p_ic (c - E_i)
    let c = pred.num_bins;
    for (i, &dg) in depth_grad.iter().enumerate() {
        if dg == 0.0 {
            continue;
        }
        let probs = pred.pixel_probs(i);
        for (k, gk) in grad[i * c..(i + 1) * c].iter_mut().enumerate() {
            *gk = dg * probs[k] * ((k + 1) as f64 - depth[i]);
        }
    }
    Ok(PatchedLoss {
        loss: loss * scale,
        grad,
        patches,
    })
}

/// Balance factors of the auxiliary losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Relative-depth weight.
    pub alpha: f64,
    /// Reconstruction weight.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::param("loss weights", "alpha and beta must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `adl + det + α · rdl + β · rcl`.
pub fn total_loss(adl: f64, det: f64, rdl: f64, rcl: f64, w: &LossWeights) -> f64 {
    adl + det + w.alpha * rdl + w.beta * rcl
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradNorms {
    pub adl: f64,
    pub rdl: f64,
}

/// Serialized loss summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adl: f64,
    pub rdl: f64,
    pub rcl: f64,
    pub det: f64,
    pub total: f64,
    pub grad_norms: GradNorms,
}

impl LossReport {
    pub fn new(adl: f64, det: f64, rdl: f64, rcl: f64, weights: &LossWeights, grad_norms: GradNorms) -> Self {
        Self {
            adl,
            rdl,
            rcl,
            det,
            total: total_loss(adl, det, rdl, rcl, weights),
            grad_norms,
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Serialize, Deserialize)]
struct DepthDistributionRepr {
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    num_bins: usize,
    logits: Vec<f64>,
}

impl TryFrom<DepthDistributionRepr> for DepthDistribution {
    type Error = Error;

    fn try_from(r: DepthDistributionRepr) -> Result<Self> {
        Self::from_logits(r.height, r.width, r.num_bins, r.logits)
    }
}

impl From<DepthDistribution> for DepthDistributionRepr {
    fn from(d: DepthDistribution) -> Self {
        Self {
            height: d.height,
            width: d.width,
            num_bins: d.num_bins,
            logits: d.logits,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth_target::UNSET_BIN;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn peaked(h: usize, w: usize, c: usize, bins: &[u32], margin: f64) -> DepthDistribution {
        let mut logits = vec![0.0; h * w * c];
        for (i, &b) in bins.iter().enumerate() {
            if b != UNSET_BIN {
                logits[i * c + b as usize - 1] = margin;
            }
        }
        DepthDistribution::from_logits(h, w, c, logits).unwrap()
    }

    fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn probabilities_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DepthDistribution::from_logits(3, 4, 20, random_logits(&mut rng, 240)).unwrap();
        for i in 0..12 {
            let p = d.pixel_probs(i);
            assert!(p.iter().all(|&x| x > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn distribution_rejects_bad_logits() {
        assert!(matches!(
            DepthDistribution::from_logits(1, 1, 3, vec![0.0, f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            DepthDistribution::from_logits(1, 2, 3, vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn perfect_prediction_has_vanishing_adl() {
        let bins = vec![3, UNSET_BIN, 17, 118];
        let t = SparseDepthTarget::from_bins(2, 2, 118, bins.clone()).unwrap();
        let lg = absolute_depth_loss(&peaked(2, 2, 118, &bins, 30.0), &t).unwrap();
        assert!(lg.loss >= 0.0 && lg.loss < 1e-9, "{}", lg.loss);
    }

    #[test]
    fn uniform_prediction_costs_log_num_bins() {
        let t = SparseDepthTarget::from_bins(1, 3, 118, vec![UNSET_BIN, 40, UNSET_BIN]).unwrap();
        let lg = absolute_depth_loss(&DepthDistribution::uniform(1, 3, 118).unwrap(), &t).unwrap();
        assert!((lg.loss - 118f64.ln()).abs() < 1e-12);
        assert!((lg.loss - 4.7707).abs() < 1e-4);
        // unmasked pixels receive no gradient
        assert!(lg.grad[..118].iter().all(|&g| g == 0.0));
        assert!(lg.grad[236..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_mask_gives_zero_adl() {
        let t = SparseDepthTarget::empty(2, 2, 5);
        let lg = absolute_depth_loss(&DepthDistribution::uniform(2, 2, 5).unwrap(), &t).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn adl_rejects_mismatched_shapes() {
        let t = SparseDepthTarget::empty(2, 3, 5);
        let d = DepthDistribution::uniform(3, 2, 5).unwrap();
        assert!(matches!(absolute_depth_loss(&d, &t), Err(Error::ShapeMismatch(_))));
        let d = DepthDistribution::uniform(2, 3, 6).unwrap();
        assert!(absolute_depth_loss(&d, &t).is_err());
    }

    #[test]
    fn adl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let c = 7;
            let bins: Vec<u32> = (0..4).map(|_| if rng.random_bool(0.75) { rng.random_range(1..=7) } else { 0 }).collect();
            let t = SparseDepthTarget::from_bins(2, 2, c, bins).unwrap();
            let logits = random_logits(&mut rng, 4 * c);
            let analytic = absolute_depth_loss(&DepthDistribution::from_logits(2, 2, c, logits.clone()).unwrap(), &t)
                .unwrap()
                .grad;
            let fd = central_difference(&logits, 1e-6, |l| {
                absolute_depth_loss(&DepthDistribution::from_logits(2, 2, c, l.to_vec()).unwrap(), &t)
                    .unwrap()
                    .loss
            });
            assert!(relative_error(&analytic, &fd) < 1e-5);
        }
    }

    #[test]
    fn adl_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 6;
        let logits = random_logits(&mut rng, 6 * c);
        let bins = vec![1, 0, 6, 3, 0, 2];
        let perm = [4, 2, 0, 5, 1, 3];
        let t = SparseDepthTarget::from_bins(2, 3, c, bins.clone()).unwrap();
        let a = absolute_depth_loss(&DepthDistribution::from_logits(2, 3, c, logits.clone()).unwrap(), &t).unwrap();
        let p_logits: Vec<f64> = perm.iter().flat_map(|&i| logits[i * c..(i + 1) * c].to_vec()).collect();
        let p_bins: Vec<u32> = perm.iter().map(|&i| bins[i]).collect();
        let pt = SparseDepthTarget::from_bins(3, 2, c, p_bins).unwrap();
        let b = absolute_depth_loss(&DepthDistribution::from_logits(3, 2, c, p_logits).unwrap(), &pt).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-14);
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(&b.grad[j * c..(j + 1) * c], &a.grad[i * c..(i + 1) * c]);
        }
    }

    #[test]
    fn expected_depth_special_cases() {
        let u = DepthDistribution::uniform(1, 1, 118).unwrap();
        assert_eq!(expected_depth(&u), vec![59.5]);
        for c in [1u32, 2, 50, 118] {
            let d = peaked(1, 1, 118, &[c], 1000.0);
            assert_eq!(expected_depth(&d), vec![c as f64]);
        }
    }

    #[test]
    fn expected_depth_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = DepthDistribution::from_logits(2, 3, 30, random_logits(&mut rng, 180)).unwrap();
        let e = expected_depth(&d);
        for (i, &ei) in e.iter().enumerate() {
            let mut naive = 0.0;
            for c in 1..=30 {
                naive += c as f64 * d.pixel_probs(i)[c - 1];
            }
            assert!((ei - naive).abs() < 1e-12);
            assert!((1.0..=30.0).contains(&ei));
        }
    }

    #[test]
    fn relative_depth_by_hand() {
        let r = relative_depth(&[3.0, 5.0]).unwrap();
        assert_eq!(r.values(), &[0.0, -2.0, 2.0, 0.0]);
        let z = relative_depth(&[4.0; 5]).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(relative_depth(&[1.0]).is_err());
    }

    #[test]
    fn normalization_closed_forms() {
        let eq = normalize_relative(&relative_depth(&[2.0, 2.0]).unwrap(), 8.0).unwrap();
        assert_eq!(eq.values(), &[0.5, 0.5, 0.5, 0.5]);
        let tau = 8.0;
        let m = normalize_relative(&relative_depth(&[0.0, tau * 2f64.ln()]).unwrap(), tau).unwrap();
        assert!((m.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        let hot = normalize_relative(&relative_depth(&[1.0, 50.0, 118.0, 7.0]).unwrap(), 1e6).unwrap();
        assert!(hot.values().iter().all(|&v| (v - 0.25).abs() < 1e-4));
        assert!(normalize_relative(&relative_depth(&[1.0, 2.0]).unwrap(), 0.0).is_err());
    }

    #[test]
    fn kl_loss_vanishes_on_identical_inputs() {
        let x = [3.0, 17.5, 42.0, 8.25];
        let lg = relative_depth_loss(&x, &x, 8.0).unwrap();
        assert_eq!(lg.loss, 0.0);
    }

    #[test]
    fn kl_loss_matches_direct_formula() {
        let p = [10.0, 12.0, 30.0];
        let g = [11.0, 11.0, 25.0];
        let tau = 4.0;
        let rp = normalize_relative(&relative_depth(&p).unwrap(), tau).unwrap();
        let rg = normalize_relative(&relative_depth(&g).unwrap(), tau).unwrap();
        let direct: f64 = rg
            .values()
            .iter()
            .zip(rp.values())
            .map(|(g, p)| g * (g / p).ln())
            .sum::<f64>()
            / 9.0;
        let lg = relative_depth_loss(&p, &g, tau).unwrap();
        assert!((lg.loss - direct).abs() < 1e-14);
        assert!(lg.loss > 0.0);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p: Vec<f64> = (0..5).map(|_| rng.random_range(1.0..60.0)).collect();
            let g: Vec<f64> = (0..5).map(|_| rng.random_range(1.0..60.0)).collect();
            let tau = rng.random_range(2.0..16.0);
            let analytic = relative_depth_loss(&p, &g, tau).unwrap().grad;
            let fd = central_difference(&p, 1e-6, |x| relative_depth_loss(x, &g, tau).unwrap().loss);
            assert!(relative_error(&analytic, &fd) < 1e-5);
        }
    }

    #[test]
    fn kl_loss_rejects_bad_input() {
        assert!(relative_depth_loss(&[1.0, 2.0], &[1.0], 8.0).is_err());
        assert!(relative_depth_loss(&[1.0], &[1.0], 8.0).is_err());
        assert!(relative_depth_loss(&[1.0, 2.0], &[1.0, 3.0], -1.0).is_err());
    }

    #[test]
    fn window_layout() {
        let cfg = PatchConfig::default();
        assert_eq!(cfg.windows(6, 6), vec![(0, 0)]);
        assert_eq!(cfg.windows(10, 12), vec![(0, 0), (0, 5), (5, 0), (5, 5)]);
        let overlapping = PatchConfig { stride: 1, ..cfg };
        assert_eq!(overlapping.windows(6, 6).len(), 4);
        assert!(cfg.windows(4, 10).is_empty());
    }

    #[test]
    fn patched_loss_without_supervision_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = DepthDistribution::from_logits(6, 6, 10, random_logits(&mut rng, 360)).unwrap();
        let t = SparseDepthTarget::empty(6, 6, 10);
        let out = patched_relative_depth_loss(&d, &t, &PatchConfig::default()).unwrap();
        assert_eq!((out.loss, out.patches), (0.0, 0));
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn patched_loss_zero_when_expected_depth_matches() {
        let bins: Vec<u32> = (0..36).map(|i| if i % 3 == 0 { 0 } else { 1 + (i % 10) as u32 }).collect();
        let t = SparseDepthTarget::from_bins(6, 6, 10, bins.clone()).unwrap();
        let d = peaked(6, 6, 10, &bins, 1000.0);
        let out = patched_relative_depth_loss(&d, &t, &PatchConfig { stride: 1, ..Default::default() }).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.patches, 4);
    }

    #[test]
    fn patched_loss_rejects_oversized_patch() {
        let d = DepthDistribution::uniform(4, 6, 5).unwrap();
        let t = SparseDepthTarget::empty(4, 6, 5);
        assert!(patched_relative_depth_loss(&d, &t, &PatchConfig::default()).is_err());
        let bad = PatchConfig { patch_size: 1, ..Default::default() };
        assert!(patched_relative_depth_loss(&d, &t, &bad).is_err());
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.beta), (0.1, 1.0));
        assert!((total_loss(1.0, 2.0, 3.0, 4.0, &w) - 7.3).abs() < 1e-15);
        let zero = LossWeights { alpha: 0.0, beta: 0.0 };
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, &zero), 3.0);
        assert!(LossWeights { alpha: -0.1, beta: 1.0 }.validate().is_err());
    }

    #[test]
    fn loss_report_json_keys() {
        let r = LossReport::new(1.0, 2.0, 3.0, 4.0, &LossWeights::default(), GradNorms::default());
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        for key in ["adl", "rdl", "rcl", "det", "total", "grad_norms"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["total"], serde_json::json!(r.total));
    }

    #[test]
    fn distribution_json_round_trip() {
        let d = DepthDistribution::from_logits(1, 2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.25]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.starts_with(r#"{"H":1,"W":2,"num_bins":3,"logits":"#));
        assert_eq!(serde_json::from_str::<DepthDistribution>(&json).unwrap(), d);
    }
}
