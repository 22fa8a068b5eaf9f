//! Synthetic scenes and the end-to-end supervision pipeline.
//!
//! [`synthesize_scene`] samples axis-aligned boxes, points on their surfaces
//! and a ground plane. [`run_pipeline`] turns a scene into depth targets,
//! fabricates depth predictions ([`PredMode`]), evaluates every loss, builds
//! noised anchors, lifts context features to BEV and collects a
//! [`PipelineReport`]. Everything is a pure function of the [`SceneSpec`], the
//! configs and the seed.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoise::{
    generate_noised_anchors, identity_head, matched_detection_loss, reconstruction_loss, DetectionTarget,
    NoiseConfig, NoisedAnchor, PairLoss, Prediction,
};
use crate::depth_target::{build_sparse_depth_target, DepthBins, PointCloud, SparseDepthTarget, DEFAULT_NUM_BINS};
use crate::error::{Error, Result};
use crate::geometry::{Box3, CameraModel, Point3};
use crate::gradcheck::{self, GradCheckSummary};
use crate::lifting::{lift_views, BevExtent, BevGrid, CameraView, ContextFeatures, DEFAULT_CONTEXT_CHANNELS};
use crate::losses::{
    absolute_depth_loss, l2_norm, patched_relative_depth_loss, DepthDistribution, GradNorms, LossReport,
    LossWeights, PatchConfig,
};

/// Logit given to the chosen bin by the fabricated predictions.
pub const PEAK_LOGIT: f64 = 30.0;

// independent RNG streams derived from the scene seed
const STREAM_SCENE: u64 = 0;
const STREAM_PREDICTION: u64 = 1;
const STREAM_CONTEXT: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Closed interval `[min, max]` in meters, serialized as a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        self.min + (self.max - self.min) * u
    }

    fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min <= self.max
    }
}

impl From<[f64; 2]> for Interval {
    fn from([min, max]: [f64; 2]) -> Self {
        Self { min, max }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.min, i.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSpec {
    pub extent: BevExtent,
    pub rows: usize,
    pub cols: usize,
}

/// Scene synthesis parameters. Missing JSON fields take the defaults of
/// [`SceneSpec::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub num_boxes: usize,
    pub center_x: Interval,
    pub center_y: Interval,
    pub center_z: Interval,
    pub size_w: Interval,
    pub size_l: Interval,
    pub size_h: Interval,
    pub points_per_box: usize,
    pub ground_points: usize,
    pub ground_x: Interval,
    pub ground_y: Interval,
    pub ground_z: f64,
    pub cameras: Vec<CameraModel>,
    pub categories: Vec<String>,
    /// Feature-map resolution `[H, W]` at which depth is supervised.
    pub feature_grid: [usize; 2],
    pub num_bins: usize,
    pub context_channels: usize,
    pub bev: BevSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_boxes: 5,
            center_x: Interval::new(-35.0, 35.0),
            center_y: Interval::new(-8.0, 8.0),
            center_z: Interval::new(0.7, 1.0),
            size_w: Interval::new(3.5, 5.0),
            size_l: Interval::new(1.6, 2.1),
            size_h: Interval::new(1.4, 1.9),
            points_per_box: 300,
            ground_points: 4000,
            ground_x: Interval::new(-50.0, 50.0),
            ground_y: Interval::new(-20.0, 20.0),
            ground_z: 0.0,
            cameras: vec![surround_camera(false), surround_camera(true)],
            categories: ["car", "truck", "pedestrian"].map(String::from).to_vec(),
            feature_grid: [64, 64],
            num_bins: DEFAULT_NUM_BINS,
            context_channels: DEFAULT_CONTEXT_CHANNELS,
            bev: BevSpec {
                extent: [-51.2, 51.2, -51.2, 51.2].into(),
                rows: 64,
                cols: 64,
            },
        }
    }
}

/// A 1600×900 camera 1.6 m above the ego origin facing ego `+x`
/// (or `-x` when `rear`), with ego `z` up.
pub fn surround_camera(rear: bool) -> CameraModel {
    use nalgebra::Matrix3;
    let k = Matrix3::new(1266.0, 0.0, 800.0, 0.0, 1266.0, 450.0, 0.0, 0.0, 1.0);
    let s = if rear { -1.0 } else { 1.0 };
    // rows: camera x (right), camera y (down), camera z (forward) in ego axes
    let r = Matrix3::new(0.0, -s, 0.0, 0.0, 0.0, -1.0, s, 0.0, 0.0);
    CameraModel::from_pose(k, r, Point3::new(0.0, 0.0, 1.6), (900, 1600)).expect("valid built-in camera")
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let intervals = [
            ("center_x", self.center_x),
            ("center_y", self.center_y),
            ("center_z", self.center_z),
            ("size_w", self.size_w),
            ("size_l", self.size_l),
            ("size_h", self.size_h),
            ("ground_x", self.ground_x),
            ("ground_y", self.ground_y),
        ];
        for (name, iv) in intervals {
            if !iv.is_valid() {
                return Err(Error::param(name, format!("range [{}, {}] is not well-ordered", iv.min, iv.max)));
            }
        }
        for (name, iv) in [("size_w", self.size_w), ("size_l", self.size_l), ("size_h", self.size_h)] {
            if iv.min <= 0.0 {
                return Err(Error::param(name, "box sizes must be positive"));
            }
        }
        if !self.ground_z.is_finite() {
            return Err(Error::NonFinite("ground_z"));
        }
        if self.num_boxes > 0 && self.categories.is_empty() {
            return Err(Error::param("categories", "at least one category is needed to label boxes"));
        }
        if self.feature_grid.contains(&0) {
            return Err(Error::param("feature_grid", "dimensions must be at least 1"));
        }
        DepthBins::new(self.num_bins)?;
        Ok(())
    }

    pub fn depth_bins(&self) -> Result<DepthBins> {
        DepthBins::new(self.num_bins)
    }

    pub fn bev_template(&self) -> Result<BevGrid> {
        BevGrid::new(self.bev.extent, self.bev.rows, self.bev.cols, self.context_channels)
    }
}

/// Sampled scene. Points are ordered box by box (`points_per_box` each)
/// followed by the ground points.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub targets: Vec<DetectionTarget>,
    pub points_per_box: usize,
}

impl Scene {
    /// Surface points of box `k`.
    pub fn box_points(&self, k: usize) -> &[Point3] {
        &self.cloud.points[k * self.points_per_box..(k + 1) * self.points_per_box]
    }

    pub fn ground_points(&self) -> &[Point3] {
        &self.cloud.points[self.targets.len() * self.points_per_box..]
    }
}

/// Uniform sample on the surface of `b`, faces chosen by area.
fn sample_surface(b: &Box3, rng: &mut impl Rng) -> Point3 {
    let areas = [b.l * b.h, b.w * b.h, b.w * b.l];
    let total = areas.iter().sum::<f64>();
    let pick = rng.random::<f64>() * total;
    let axis = if pick < areas[0] {
        0
    } else if pick < areas[0] + areas[1] {
        1
    } else {
        2
    };
    let lo = b.min_corner();
    let hi = b.max_corner();
    let mut coords = [0.0; 3];
    let (lo, hi) = ([lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]);
    for k in 0..3 {
        coords[k] = if k == axis {
            if rng.random_bool(0.5) {
                hi[k]
            } else {
                lo[k]
            }
        } else {
            lo[k] + (hi[k] - lo[k]) * rng.random::<f64>()
        };
    }
    coords.into()
}

pub fn synthesize_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, STREAM_SCENE);
    let mut targets = Vec::with_capacity(spec.num_boxes);
    for _ in 0..spec.num_boxes {
        let center = Point3::new(
            spec.center_x.sample(&mut rng),
            spec.center_y.sample(&mut rng),
            spec.center_z.sample(&mut rng),
        );
        let bbox = Box3::new(
            center,
            spec.size_w.sample(&mut rng),
            spec.size_l.sample(&mut rng),
            spec.size_h.sample(&mut rng),
        )?;
        let class_label = rng.random_range(0..spec.categories.len());
        targets.push(DetectionTarget { bbox, class_label });
    }
    let mut points = Vec::with_capacity(spec.num_boxes * spec.points_per_box + spec.ground_points);
    for t in &targets {
        points.extend((0..spec.points_per_box).map(|_| sample_surface(&t.bbox, &mut rng)));
    }
    points.extend((0..spec.ground_points).map(|_| {
        Point3::new(spec.ground_x.sample(&mut rng), spec.ground_y.sample(&mut rng), spec.ground_z)
    }));
    Ok(Scene {
        cloud: PointCloud::new(points)?,
        targets,
        points_per_box: spec.points_per_box,
    })
}

/// How the pipeline fabricates depth predictions in place of a depth network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PredMode {
    /// Peaked at the ground-truth bin.
    Oracle,
    /// Peaked at the ground-truth depth plus Gaussian noise of `sigma` meters.
    Noisy { sigma: f64 },
    /// Zero logits everywhere.
    Uniform,
}

/// Fabricates a prediction for `target`. Unsupervised pixels get zero logits.
pub fn fabricate_prediction(target: &SparseDepthTarget, mode: PredMode, rng: &mut impl Rng) -> Result<DepthDistribution> {
    let (h, w, c) = (target.height(), target.width(), target.num_bins());
    let mut logits = vec![0.0; h * w * c];
    if let PredMode::Noisy { sigma } = mode {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be finite and non-negative, got {sigma}")));
        }
    }
    for i in (0..h * w).filter(|&i| target.is_masked(i)) {
        let gt = target.bins()[i] as f64;
        let peak = match mode {
            PredMode::Uniform => continue,
            PredMode::Oracle => gt,
            PredMode::Noisy { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                (gt + sigma * z).round().clamp(1.0, c as f64)
            }
        };
        logits[i * c + peak as usize - 1] = PEAK_LOGIT;
    }
    DepthDistribution::from_logits(h, w, c, logits)
}

/// Knobs of [`run_pipeline`] that do not affect the losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    /// Random instances per finite-difference suite; 0 skips the suites.
    pub gradcheck_instances: usize,
    /// Record wall-clock time per stage. Timings make the report
    /// non-reproducible, so this is off by default.
    pub timings: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            gradcheck_instances: 3,
            timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSection {
    #[serde(flatten)]
    pub report: LossReport,
    pub alpha: f64,
    pub beta: f64,
    /// The ordinary detection branch has no head here; `det` is the CE + L1
    /// loss of identity predictions against the ground truth.
    pub det_is_placeholder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub boxes: usize,
    pub points: usize,
    pub cameras: usize,
    /// Supervised cells per camera.
    pub masked_pixels: Vec<usize>,
    /// Windows that contributed to the relative-depth loss, per camera.
    pub relative_depth_patches: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStats {
    pub count: usize,
    pub groups: usize,
    pub mean_sigmas: [f64; 3],
    pub min_sigmas: [f64; 3],
    pub max_sigmas: [f64; 3],
    pub mean_l1: f64,
    pub mean_ce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevSummary {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub occupied_cells: usize,
    pub total_cells: usize,
    pub feature_sum: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub pred_mode: PredMode,
    pub patch: PatchConfig,
    pub noise: NoiseConfig,
    pub scene: SceneSummary,
    pub losses: LossSection,
    pub gradcheck: Vec<GradCheckSummary>,
    pub anchors: AnchorStats,
    pub bev: BevSummary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings_ms: Option<BTreeMap<String, f64>>,
    /// All grad checks under threshold.
    pub pass: bool,
}

struct Stopwatch {
    enabled: bool,
    last: Instant,
    laps: BTreeMap<String, f64>,
}

impl Stopwatch {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            last: Instant::now(),
            laps: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        if self.enabled {
            self.laps.insert(stage.to_string(), (now - self.last).as_secs_f64() * 1e3);
        }
        self.last = now;
    }

    fn finish(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.laps)
    }
}

fn anchor_stats(anchors: &[NoisedAnchor], groups: usize, per_query: &[PairLoss]) -> AnchorStats {
    let n = anchors.len().max(1) as f64;
    let mut mean = [0.0; 3];
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for a in anchors {
        let s = [a.sigmas.depth, a.sigmas.scale, a.sigmas.location];
        for k in 0..3 {
            mean[k] += s[k] / n;
            min[k] = min[k].min(s[k]);
            max[k] = max[k].max(s[k]);
        }
    }
    if anchors.is_empty() {
        min = [1.0; 3];
        max = [1.0; 3];
    }
    AnchorStats {
        count: anchors.len(),
        groups,
        mean_sigmas: mean,
        min_sigmas: min,
        max_sigmas: max,
        mean_l1: per_query.iter().map(|q| q.l1).sum::<f64>() / n,
        mean_ce: per_query.iter().map(|q| q.ce).sum::<f64>() / n,
    }
}

fn bev_summary(grid: &BevGrid) -> BevSummary {
    let ch = grid.channels().max(1);
    BevSummary {
        rows: grid.rows(),
        cols: grid.cols(),
        channels: grid.channels(),
        occupied_cells: grid.features().chunks(ch).filter(|c| c.iter().any(|&v| v != 0.0)).count(),
        total_cells: grid.rows() * grid.cols(),
        feature_sum: grid.features().iter().sum(),
        max_abs: grid.features().iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Runs every stage on a synthesized scene.
pub fn run_pipeline(
    spec: &SceneSpec,
    mode: PredMode,
    patch: &PatchConfig,
    noise: &NoiseConfig,
    weights: &LossWeights,
    opts: &PipelineOptions,
) -> Result<PipelineReport> {
    let mut clock = Stopwatch::new(opts.timings);
    patch.validate().map_err(|e| e.in_stage("config"))?;
    noise.validate().map_err(|e| e.in_stage("config"))?;
    weights.validate().map_err(|e| e.in_stage("config"))?;
    if spec.cameras.is_empty() {
        return Err(Error::param("cameras", "the pipeline projects points and needs at least one camera").in_stage("config"));
    }

    let scene = synthesize_scene(spec).map_err(|e| e.in_stage("synthesize"))?;
    clock.lap("synthesize");

    let bins = spec.depth_bins().map_err(|e| e.in_stage("depth_target"))?;
    let grid = (spec.feature_grid[0], spec.feature_grid[1]);
    let targets = spec
        .cameras
        .iter()
        .map(|cam| build_sparse_depth_target(&scene.cloud, cam, bins, grid))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("depth_target"))?;
    clock.lap("depth_target");

    let mut rng = rng_for(spec.seed, STREAM_PREDICTION);
    let preds = targets
        .iter()
        .map(|t| fabricate_prediction(t, mode, &mut rng))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("prediction"))?;
    clock.lap("prediction");

    // pooled over views: adl averages all masked pixels, rdl all contributing windows
    let (mut adl_sum, mut adl_grad_sq, mut masked) = (0.0, 0.0, Vec::new());
    let (mut rdl_sum, mut rdl_grad_sq, mut patches) = (0.0, 0.0, Vec::new());
    for (pred, target) in preds.iter().zip(&targets) {
        let a = absolute_depth_loss(pred, target).map_err(|e| e.in_stage("absolute_depth_loss"))?;
        let m = target.mask_count();
        adl_sum += a.loss * m as f64;
        adl_grad_sq += (l2_norm(&a.grad) * m as f64).powi(2);
        masked.push(m);
        let r = patched_relative_depth_loss(pred, target, patch).map_err(|e| e.in_stage("relative_depth_loss"))?;
        rdl_sum += r.loss * r.patches as f64;
        rdl_grad_sq += (l2_norm(&r.grad) * r.patches as f64).powi(2);
        patches.push(r.patches);
    }
    let total_masked: usize = masked.iter().sum();
    let total_patches: usize = patches.iter().sum();
    let pooled = |sum: f64, sq: f64, n: usize| {
        if n == 0 {
            (0.0, 0.0)
        } else {
            (sum / n as f64, sq.sqrt() / n as f64)
        }
    };
    let (adl, adl_grad_norm) = pooled(adl_sum, adl_grad_sq, total_masked);
    let (rdl, rdl_grad_norm) = pooled(rdl_sum, rdl_grad_sq, total_patches);
    clock.lap("depth_losses");

    let anchors = generate_noised_anchors(&scene.targets, noise).map_err(|e| e.in_stage("denoise"))?;
    let num_classes = spec.categories.len();
    let recon = reconstruction_loss(&anchors, &identity_head(&anchors, num_classes), &scene.targets)
        .map_err(|e| e.in_stage("denoise"))?;
    let gt_echo: Vec<Prediction> = scene
        .targets
        .iter()
        .map(|t| {
            let mut class_probs = vec![0.0; num_classes];
            class_probs[t.class_label] = 1.0;
            Prediction { bbox: t.bbox, class_probs }
        })
        .collect();
    let det = matched_detection_loss(&gt_echo, &scene.targets).map_err(|e| e.in_stage("detection"))?;
    clock.lap("denoise");

    let mut rng = rng_for(spec.seed, STREAM_CONTEXT);
    let (h, w) = grid;
    let contexts = preds
        .iter()
        .map(|_| {
            let data = (0..h * w * spec.context_channels).map(|_| rng.random_range(-1.0..1.0)).collect();
            ContextFeatures::new(h, w, spec.context_channels, data)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("lifting"))?;
    let views: Vec<CameraView<'_>> = preds
        .iter()
        .zip(&contexts)
        .zip(&spec.cameras)
        .map(|((pred, ctx), cam)| CameraView { pred, ctx, cam })
        .collect();
    let template = spec.bev_template().map_err(|e| e.in_stage("lifting"))?;
    let bev = lift_views(&views, bins, &template).map_err(|e| e.in_stage("lifting"))?;
    clock.lap("lifting");

    let gradcheck = if opts.gradcheck_instances > 0 {
        gradcheck::run_all(spec.seed, opts.gradcheck_instances).map_err(|e| e.in_stage("gradcheck"))?
    } else {
        Vec::new()
    };
    clock.lap("gradcheck");

    let report = PipelineReport {
        seed: spec.seed,
        pred_mode: mode,
        patch: *patch,
        noise: *noise,
        scene: SceneSummary {
            boxes: scene.targets.len(),
            points: scene.cloud.len(),
            cameras: spec.cameras.len(),
            masked_pixels: masked,
            relative_depth_patches: patches,
        },
        losses: LossSection {
            report: LossReport::new(
                adl,
                det.loss,
                rdl,
                recon.loss,
                weights,
                GradNorms {
                    adl: adl_grad_norm,
                    rdl: rdl_grad_norm,
                },
            ),
            alpha: weights.alpha,
            beta: weights.beta,
            det_is_placeholder: true,
        },
        pass: gradcheck.iter().all(|g| g.pass),
        gradcheck,
        anchors: anchor_stats(&anchors, noise.groups, &recon.per_query),
        bev: bev_summary(&bev),
        timings_ms: clock.finish(),
    };
    check_finite(&report)?;
    Ok(report)
}

fn check_finite(report: &PipelineReport) -> Result<()> {
    let l = &report.losses.report;
    let mut values = vec![l.adl, l.rdl, l.rcl, l.det, l.total, l.grad_norms.adl, l.grad_norms.rdl];
    values.extend(report.anchors.mean_sigmas);
    values.extend([report.anchors.mean_l1, report.anchors.mean_ce, report.bev.feature_sum, report.bev.max_abs]);
    values.extend(report.gradcheck.iter().map(|g| g.max_rel_error));
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pipeline report").in_stage("report"));
    }
    Ok(())
}
