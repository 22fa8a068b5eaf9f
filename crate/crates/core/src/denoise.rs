//! Noised reference anchors for depth-calibration denoising.
//!
//! A ground-truth box is perturbed by three multiplicative maps applied in
//! order: depth noise scales all six fields (a depth error along the viewing
//! ray moves and rescales the box together), scale noise scales the size and
//! location noise scales the center. Each noised anchor is reconstructed by
//! the detection head and supervised against its own source box.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3;

pub const DEFAULT_DELTA_DEPTH: f64 = 0.5;
pub const DEFAULT_DELTA_SCALE: f64 = 0.1;
pub const DEFAULT_DELTA_LOCATION: f64 = 0.1;

/// Probability floor inside the classification log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Half-ranges of the noise factors; each factor is drawn from `(1 - δ, 1 + δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub delta_d: f64,
    pub delta_s: f64,
    pub delta_l: f64,
    /// Noised copies per ground-truth box.
    pub groups: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            delta_d: DEFAULT_DELTA_DEPTH,
            delta_s: DEFAULT_DELTA_SCALE,
            delta_l: DEFAULT_DELTA_LOCATION,
            groups: 1,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    /// All half-ranges zero: anchors reproduce the ground truth.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            delta_d: 0.0,
            delta_s: 0.0,
            delta_l: 0.0,
            groups: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("delta_d", self.delta_d), ("delta_s", self.delta_s), ("delta_l", self.delta_l)] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::param(name, format!("must lie in [0, 1), got {d}")));
            }
        }
        Ok(())
    }
}

/// Noise factors actually applied to one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigmas {
    pub depth: f64,
    pub scale: f64,
    pub location: f64,
}

impl Sigmas {
    pub const IDENTITY: Sigmas = Sigmas {
        depth: 1.0,
        scale: 1.0,
        location: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionTarget {
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub class_label: usize,
}

/// A perturbed copy of a ground-truth box fed to the head as an extra query.
/// The query content is the source class label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisedAnchor {
    pub source_index: usize,
    pub class_label: usize,
    pub sigmas: Sigmas,
    #[serde(rename = "box")]
    pub anchor: Box3,
}

fn check_factor(name: &'static str, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(name, format!("noise factor must be positive, got {sigma}")));
    }
    Ok(())
}

/// Scales center and size by `sigma`.
pub fn apply_depth_noise(b: &Box3, sigma: f64) -> Result<Box3> {
    check_factor("sigma_d", sigma)?;
    Ok(Box3 {
        center: b.center.scaled(sigma),
        w: b.w * sigma,
        l: b.l * sigma,
        h: b.h * sigma,
    })
}

/// Scales the size by `sigma`, keeping the center.
pub fn apply_scale_noise(b: &Box3, sigma: f64) -> Result<Box3> {
    check_factor("sigma_s", sigma)?;
    Ok(Box3 {
        w: b.w * sigma,
        l: b.l * sigma,
        h: b.h * sigma,
        ..*b
    })
}

/// Scales the center by `sigma`, keeping the size.
pub fn apply_location_noise(b: &Box3, sigma: f64) -> Result<Box3> {
    check_factor("sigma_l", sigma)?;
    Ok(Box3 {
        center: b.center.scaled(sigma),
        ..*b
    })
}

/// Depth noise first, then scale, then location.
pub fn compose_noise(b: &Box3, s: &Sigmas) -> Result<Box3> {
    let b = apply_depth_noise(b, s.depth)?;
    let b = apply_scale_noise(&b, s.scale)?;
    apply_location_noise(&b, s.location)
}

/// Uniform draw from the open interval `(1 - delta, 1 + delta)`.
fn draw_factor(rng: &mut ChaCha8Rng, delta: f64) -> f64 {
    let u = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    1.0 + delta * (2.0 * u - 1.0)
}

/// Produces `groups × targets.len()` anchors, group-major. Factors are drawn
/// per anchor in the order depth, scale, location.
pub fn generate_noised_anchors(targets: &[DetectionTarget], cfg: &NoiseConfig) -> Result<Vec<NoisedAnchor>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(targets.len() * cfg.groups);
    for _ in 0..cfg.groups {
        for (source_index, t) in targets.iter().enumerate() {
            let sigmas = Sigmas {
                depth: draw_factor(&mut rng, cfg.delta_d),
                scale: draw_factor(&mut rng, cfg.delta_s),
                location: draw_factor(&mut rng, cfg.delta_l),
            };
            out.push(NoisedAnchor {
                source_index,
                class_label: t.class_label,
                sigmas,
                anchor: compose_noise(&t.bbox, &sigmas)?,
            });
        }
    }
    Ok(out)
}

/// One head output: a box and a class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub class_probs: Vec<f64>,
}

/// Stand-in head that echoes each anchor box with a one-hot class
/// distribution on the anchor's label.
pub fn identity_head(anchors: &[NoisedAnchor], num_classes: usize) -> Vec<Prediction> {
    anchors
        .iter()
        .map(|a| {
            let mut class_probs = vec![0.0; num_classes.max(a.class_label + 1)];
            class_probs[a.class_label] = 1.0;
            Prediction {
                bbox: a.anchor,
                class_probs,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairLoss {
    pub ce: f64,
    pub l1: f64,
}

impl PairLoss {
    pub fn total(&self) -> f64 {
        self.ce + self.l1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLoss {
    pub loss: f64,
    pub per_query: Vec<PairLoss>,
}

/// Classification cross-entropy plus L1 over the six box parameters.
pub fn pair_loss(pred: &Prediction, target: &DetectionTarget) -> Result<PairLoss> {
    let p = *pred.class_probs.get(target.class_label).ok_or_else(|| {
        Error::ShapeMismatch(format!(
            "class {} outside a {}-way prediction",
            target.class_label,
            pred.class_probs.len()
        ))
    })?;
    let l1 = pred
        .bbox
        .to_array()
        .iter()
        .zip(target.bbox.to_array())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(PairLoss {
        ce: -p.max(PROB_FLOOR).ln(),
        l1,
    })
}

fn mean_loss(per_query: Vec<PairLoss>) -> DetectionLoss {
    let loss = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().map(PairLoss::total).sum::<f64>() / per_query.len() as f64
    };
    DetectionLoss { loss, per_query }
}

/// Reconstruction loss of the denoising queries. Each prediction is matched
/// to the source box of the anchor at the same position.
pub fn reconstruction_loss(
    anchors: &[NoisedAnchor],
    predictions: &[Prediction],
    targets: &[DetectionTarget],
) -> Result<DetectionLoss> {
    if anchors.len() != predictions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} anchors but {} predictions",
            anchors.len(),
            predictions.len()
        )));
    }
    let per_query = anchors
        .iter()
        .zip(predictions)
        .map(|(a, p)| {
            let t = targets.get(a.source_index).ok_or_else(|| {
                Error::ShapeMismatch(format!("anchor source {} with {} targets", a.source_index, targets.len()))
            })?;
            pair_loss(p, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_loss(per_query))
}

/// The same CE + L1 form with predictions matched to targets by position.
pub fn matched_detection_loss(predictions: &[Prediction], targets: &[DetectionTarget]) -> Result<DetectionLoss> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions but {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let per_query = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| pair_loss(p, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_loss(per_query))
}

/// One JSON object per line.
pub fn write_anchors_jsonl(anchors: &[NoisedAnchor], mut w: impl Write) -> Result<()> {
    for a in anchors {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_anchors_jsonl(s: &str) -> Result<Vec<NoisedAnchor>> {
    s.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
