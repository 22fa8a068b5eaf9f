use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use depthaware::denoise::{generate_noised_anchors, write_anchors_jsonl, DetectionTarget, NoiseConfig};
use depthaware::depth_target::{build_sparse_depth_target, DepthBins, PointCloud, SparseDepthTarget};
use depthaware::geometry::CameraModel;
use depthaware::gradcheck;
use depthaware::lifting::{lift_views, BevGrid, CameraView, ContextFeatures};
use depthaware::losses::{
    absolute_depth_loss, l2_norm, patched_relative_depth_loss, DepthDistribution, GradNorms, LossReport,
    LossWeights, PatchConfig,
};
use depthaware::scene::{run_pipeline, PipelineOptions, PredMode, SceneSpec};
use depthaware::{Error, Result};

#[derive(Parser)]
#[command(name = "depthaware", version, about = "Depth supervision, denoising anchors and BEV lifting on JSON files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a point cloud into a sparse depth target
    DepthTarget {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 118)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Depth losses of a prediction against a target
    Losses {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        prediction: PathBuf,
        #[command(flatten)]
        patch: PatchArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Detection loss to fold into the total
        #[arg(long, default_value_t = 0.0)]
        det: f64,
        /// Reconstruction loss to fold into the total
        #[arg(long, default_value_t = 0.0)]
        rcl: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Noised reference anchors as JSON lines
    Denoise {
        /// JSON array of {"box": [x,y,z,w,l,h], "class_label": k}
        #[arg(long)]
        targets: PathBuf,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lift context features into a BEV grid (header JSON + .bin payload)
    Lift {
        /// One per camera; repeat together with --context and --camera
        #[arg(long, required = true)]
        prediction: Vec<PathBuf>,
        #[arg(long, required = true)]
        context: Vec<PathBuf>,
        #[arg(long, required = true)]
        camera: Vec<PathBuf>,
        #[arg(long, default_value_t = 118)]
        bins: usize,
        /// x_min x_max y_min y_max in meters
        #[arg(long, num_args = 4, allow_negative_numbers = true, default_values_t = [-51.2, 51.2, -51.2, 51.2])]
        extent: Vec<f64>,
        #[arg(long, default_value_t = 128)]
        rows: usize,
        #[arg(long, default_value_t = 128)]
        cols: usize,
        /// Header path; the payload goes next to it with extension .bin
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline on a synthetic scene
    Demo(DemoArgs),
    /// Finite-difference checks of every analytic gradient
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PatchArgs {
    #[arg(long, default_value_t = 5)]
    patch_size: usize,
    /// Window stride; defaults to the patch size
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value_t = 8.0)]
    tau: f64,
}

impl PatchArgs {
    fn config(&self) -> PatchConfig {
        PatchConfig {
            patch_size: self.patch_size,
            stride: self.stride.unwrap_or(self.patch_size),
            temperature: self.tau,
        }
    }
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
}

impl WeightArgs {
    fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, default_value_t = 0.5)]
    delta_d: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_s: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_l: f64,
    #[arg(long, default_value_t = 1)]
    groups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Noisy,
    Uniform,
}

#[derive(Args)]
struct DemoArgs {
    /// Scene JSON; omitted fields use the built-in 5-box, 2-camera scene
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Noisy)]
    mode: Mode,
    /// Gaussian depth noise in meters for --mode noisy
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Overrides the scene seed; also seeds the anchor noise
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bins: Option<usize>,
    #[command(flatten)]
    patch: PatchArgs,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, default_value_t = 0.5)]
    delta_d: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_s: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_l: f64,
    #[arg(long, default_value_t = 1)]
    groups: usize,
    #[arg(long, default_value_t = 3)]
    gradcheck_instances: usize,
    /// Add per-stage wall-clock timings (the report is then not reproducible)
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::DepthTarget {
            cloud,
            camera,
            height,
            width,
            bins,
            out,
        } => {
            let cloud: PointCloud = read_json(&cloud)?;
            let cloud = PointCloud::new(cloud.points)?;
            let cam: CameraModel = read_json(&camera)?;
            let target = build_sparse_depth_target(&cloud, &cam, DepthBins::new(bins)?, (height, width))?;
            emit_json(out.as_deref(), &target)?;
        }
        Command::Losses {
            target,
            prediction,
            patch,
            weights,
            det,
            rcl,
            out,
        } => {
            let target: SparseDepthTarget = read_json(&target)?;
            let pred: DepthDistribution = read_json(&prediction)?;
            let weights = weights.weights();
            weights.validate()?;
            let adl = absolute_depth_loss(&pred, &target)?;
            let rdl = patched_relative_depth_loss(&pred, &target, &patch.config())?;
            let norms = GradNorms {
                adl: l2_norm(&adl.grad),
                rdl: l2_norm(&rdl.grad),
            };
            emit_json(out.as_deref(), &LossReport::new(adl.loss, det, rdl.loss, rcl, &weights, norms))?;
        }
        Command::Denoise { targets, noise, out } => {
            let targets: Vec<DetectionTarget> = read_json(&targets)?;
            let cfg = NoiseConfig {
                delta_d: noise.delta_d,
                delta_s: noise.delta_s,
                delta_l: noise.delta_l,
                groups: noise.groups,
                seed: noise.seed,
            };
            let mut buf = Vec::new();
            write_anchors_jsonl(&generate_noised_anchors(&targets, &cfg)?, &mut buf)?;
            emit(out.as_deref(), &buf)?;
        }
        Command::Lift {
            prediction,
            context,
            camera,
            bins,
            extent,
            rows,
            cols,
            out,
        } => {
            if prediction.len() != context.len() || prediction.len() != camera.len() {
                return Err(Error::ShapeMismatch(
                    "--prediction, --context and --camera must be given the same number of times".into(),
                ));
            }
            let preds = prediction.iter().map(|p| read_json::<DepthDistribution>(p)).collect::<Result<Vec<_>>>()?;
            let ctxs = context.iter().map(|p| read_json::<ContextFeatures>(p)).collect::<Result<Vec<_>>>()?;
            let cams = camera.iter().map(|p| read_json::<CameraModel>(p)).collect::<Result<Vec<_>>>()?;
            let views: Vec<CameraView<'_>> = preds
                .iter()
                .zip(&ctxs)
                .zip(&cams)
                .map(|((pred, ctx), cam)| CameraView { pred, ctx, cam })
                .collect();
            let extent = [extent[0], extent[1], extent[2], extent[3]].into();
            let template = BevGrid::new(extent, rows, cols, ctxs[0].channels())?;
            let bev = lift_views(&views, DepthBins::new(bins)?, &template)?;
            let payload = bev.write(&out)?;
            eprintln!("wrote {} and {}", out.display(), payload.display());
        }
        Command::Demo(args) => {
            let mut spec = match &args.scene {
                Some(p) => read_json::<SceneSpec>(p)?,
                None => SceneSpec::default(),
            };
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            if let Some(bins) = args.bins {
                spec.num_bins = bins;
            }
            let mode = match args.mode {
                Mode::Oracle => PredMode::Oracle,
                Mode::Noisy => PredMode::Noisy { sigma: args.sigma },
                Mode::Uniform => PredMode::Uniform,
            };
            let noise = NoiseConfig {
                delta_d: args.delta_d,
                delta_s: args.delta_s,
                delta_l: args.delta_l,
                groups: args.groups,
                seed: spec.seed,
            };
            let opts = PipelineOptions {
                gradcheck_instances: args.gradcheck_instances,
                timings: args.timings,
            };
            let report = run_pipeline(&spec, mode, &args.patch.config(), &noise, &args.weights.weights(), &opts)?;
            emit_json(args.out.as_deref(), &report)?;
        }
        Command::Gradcheck { seed, instances, out } => {
            let summaries = gradcheck::run_all(seed, instances)?;
            for s in &summaries {
                eprintln!(
                    "{:<30} {:>3} instances  max rel err {:.3e}  {}",
                    s.op,
                    s.instances,
                    s.max_rel_error,
                    if s.pass { "PASS" } else { "FAIL" }
                );
            }
            emit_json(out.as_deref(), &summaries)?;
            if !summaries.iter().all(|s| s.pass) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
