//! Full pipeline on the built-in scene: depth targets, depth losses,
//! denoising anchors, BEV lifting and gradient checks, printed as JSON.
//!
//! cargo run --example pipeline [seed] [sigma]

use depthaware::denoise::NoiseConfig;
use depthaware::losses::{LossWeights, PatchConfig};
use depthaware::scene::{run_pipeline, PipelineOptions, PredMode, SceneSpec};

fn main() -> depthaware::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let sigma = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let spec = SceneSpec { seed, ..Default::default() };
    let report = run_pipeline(
        &spec,
        PredMode::Noisy { sigma },
        &PatchConfig::default(),
        &NoiseConfig { seed, ..Default::default() },
        &LossWeights::default(),
        &PipelineOptions { timings: true, ..Default::default() },
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let l = &report.losses.report;
    eprintln!(
        "total {:.6} = adl {:.6} + det {} + {} * rdl {:.6} + {} * rcl {:.6}",
        l.total, l.adl, l.det, report.losses.alpha, l.rdl, report.losses.beta, l.rcl
    );
    Ok(())
}
