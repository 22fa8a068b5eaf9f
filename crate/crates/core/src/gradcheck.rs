//! Finite-difference verification of the analytic loss gradients.
//!
//! The suites draw random instances from a seeded generator, evaluate the
//! loss at `x ± h·e_i` for every coordinate and compare against the analytic
//! gradient with [`relative_error`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth_target::{SparseDepthTarget, UNSET_BIN};
use crate::error::Result;
use crate::losses::{
    absolute_depth_loss, expected_depth, patched_relative_depth_loss, relative_depth_loss, DepthDistribution, PatchConfig,
};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_REL_TOL: f64 = 1e-5;
/// Minimum spacing of masked expected depths in patched instances.
pub const MIN_DEPTH_GAP: f64 = 1e-3;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(‖a‖∞, ‖b‖∞)`; zero when both vectors vanish.
///
/// Scaling by the largest component keeps near-zero entries, whose
/// finite-difference estimates are dominated by cancellation noise, from
/// dominating the comparison.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub op: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl GradCheckSummary {
    fn new(op: &str, errors: &[f64]) -> Self {
        let max_rel_error = errors.iter().copied().fold(0.0, f64::max);
        Self {
            op: op.to_string(),
            instances: errors.len(),
            max_rel_error,
            threshold: GRAD_REL_TOL,
            pass: errors.iter().all(|e| *e < GRAD_REL_TOL),
        }
    }
}

fn random_target(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, density: f64) -> Result<SparseDepthTarget> {
    let bins = (0..h * w)
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(1..=c as u32)
            } else {
                UNSET_BIN
            }
        })
        .collect();
    SparseDepthTarget::from_bins(h, w, c, bins)
}

fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

/// Smallest gap between expected depths of two masked pixels.
fn min_masked_gap(pred: &DepthDistribution, target: &SparseDepthTarget) -> f64 {
    let e = expected_depth(pred);
    let mut masked: Vec<f64> = (0..e.len()).filter(|&i| target.is_masked(i)).map(|i| e[i]).collect();
    masked.sort_by(f64::total_cmp);
    masked.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Cross-entropy gradient on a 2×2 grid with random bins and logits.
pub fn check_absolute_depth_loss(seed: u64, instances: usize) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let c = rng.random_range(4..=24);
        let target = random_target(&mut rng, 2, 2, c, 0.8)?;
        let logits = random_logits(&mut rng, 4 * c);
        let eval = |l: &[f64]| -> Result<_> {
            absolute_depth_loss(&DepthDistribution::from_logits(2, 2, c, l.to_vec())?, &target)
        };
        let analytic = eval(&logits)?.grad;
        let fd = central_difference(&logits, FD_STEP, |l| eval(l).map(|r| r.loss).unwrap_or(f64::NAN));
        errors.push(relative_error(&analytic, &fd));
    }
    Ok(GradCheckSummary::new("absolute_depth_loss", &errors))
}

/// KL relative-depth gradient on random depth pairs of length 2..=12.
pub fn check_relative_depth_loss(seed: u64, instances: usize) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let n = rng.random_range(2..=12);
        let tau = rng.random_range(1.0..16.0);
        // depths within a few temperatures of each other
        let center = rng.random_range(1.0..118.0);
        let band = 4.0 * tau;
        let pred: Vec<f64> = (0..n).map(|_| center + rng.random_range(-band..band)).collect();
        let gt: Vec<f64> = (0..n).map(|_| (center + rng.random_range(-band..band)).round()).collect();
        let analytic = relative_depth_loss(&pred, &gt, tau)?.grad;
        let fd = central_difference(&pred, FD_STEP, |x| {
            relative_depth_loss(x, &gt, tau).map(|r| r.loss).unwrap_or(f64::NAN)
        });
        errors.push(relative_error(&analytic, &fd));
    }
    Ok(GradCheckSummary::new("relative_depth_loss", &errors))
}

/// Patched loss gradient through expected depth on a 6×6 grid with `p = 5`,
/// alternating non-overlapping and stride-1 windows.
pub fn check_patched_relative_depth_loss(seed: u64, instances: usize) -> Result<GradCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for k in 0..instances {
        let c = rng.random_range(6..=16);
        let target = random_target(&mut rng, 6, 6, c, 0.6)?;
        // |E_j - E_k| has a kink at ties; keep it out of the difference stencil
        let logits = loop {
            let l = random_logits(&mut rng, 36 * c);
            if min_masked_gap(&DepthDistribution::from_logits(6, 6, c, l.clone())?, &target) >= MIN_DEPTH_GAP {
                break l;
            }
        };
        let cfg = PatchConfig {
            patch_size: 5,
            stride: if k % 2 == 0 { 5 } else { 1 },
            temperature: rng.random_range(1.0..10.0),
        };
        let eval = |l: &[f64]| -> Result<_> {
            patched_relative_depth_loss(&DepthDistribution::from_logits(6, 6, c, l.to_vec())?, &target, &cfg)
        };
        let analytic = eval(&logits)?.grad;
        let fd = central_difference(&logits, FD_STEP, |l| eval(l).map(|r| r.loss).unwrap_or(f64::NAN));
        errors.push(relative_error(&analytic, &fd));
    }
    Ok(GradCheckSummary::new("patched_relative_depth_loss", &errors))
}

/// Runs every suite with `instances` random cases each.
pub fn run_all(seed: u64, instances: usize) -> Result<Vec<GradCheckSummary>> {
    Ok(vec![
        check_absolute_depth_loss(seed, instances)?,
        check_relative_depth_loss(seed.wrapping_add(1), instances)?,
        check_patched_relative_depth_loss(seed.wrapping_add(2), instances)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_a_cubic() {
        let g = central_difference(&[1.0, -2.0], 1e-5, |x| x[0].powi(3) + 2.0 * x[1]);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        let e = relative_error(&[1.0, 2.0], &[1.0, 2.2]);
        assert!((e - 0.2 / 2.2).abs() < 1e-15);
        assert_eq!(relative_error(&[1e6, 0.0], &[1e6, 1e-3]), 1e-9);
    }

    #[test]
    fn suites_pass() {
        for s in run_all(99, 4).unwrap() {
            assert!(s.pass, "{s:?}");
            assert_eq!(s.instances, 4);
        }
    }
}
