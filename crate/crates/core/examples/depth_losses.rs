//! Absolute (cross-entropy) and patched relative (KL) depth losses for
//! predictions of increasing quality against the same sparse target.
//!
//! cargo run --example depth_losses

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use depthaware::depth_target::build_sparse_depth_target;
use depthaware::losses::{
    absolute_depth_loss, expected_depth, l2_norm, patched_relative_depth_loss, relative_depth, normalize_relative,
    PatchConfig,
};
use depthaware::scene::{fabricate_prediction, synthesize_scene, PredMode, SceneSpec};

fn main() -> depthaware::Result<()> {
    let spec = SceneSpec::default();
    let scene = synthesize_scene(&spec)?;
    let [h, w] = spec.feature_grid;
    let target = build_sparse_depth_target(&scene.cloud, &spec.cameras[0], spec.depth_bins()?, (h, w))?;
    let patch = PatchConfig::default();

    println!("{} supervised pixels, {}x{} windows of stride {}\n", target.mask_count(), patch.patch_size, patch.patch_size, patch.stride);
    println!("{:<16} {:>10} {:>12} {:>10} {:>12} {:>8}", "prediction", "adl", "|grad adl|", "rdl", "|grad rdl|", "patches");
    let modes = [
        ("oracle", PredMode::Oracle),
        ("noisy 0.5 m", PredMode::Noisy { sigma: 0.5 }),
        ("noisy 2 m", PredMode::Noisy { sigma: 2.0 }),
        ("noisy 8 m", PredMode::Noisy { sigma: 8.0 }),
        ("uniform", PredMode::Uniform),
    ];
    for (name, mode) in modes {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = fabricate_prediction(&target, mode, &mut rng)?;
        let adl = absolute_depth_loss(&pred, &target)?;
        let rdl = patched_relative_depth_loss(&pred, &target, &patch)?;
        println!(
            "{name:<16} {:>10.4} {:>12.3e} {:>10.3e} {:>12.3e} {:>8}",
            adl.loss,
            l2_norm(&adl.grad),
            rdl.loss,
            l2_norm(&rdl.grad),
            rdl.patches
        );
    }

    let masked: Vec<usize> = (0..h * w).filter(|&i| target.is_masked(i)).take(4).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pred = fabricate_prediction(&target, PredMode::Noisy { sigma: 2.0 }, &mut rng)?;
    let e = expected_depth(&pred);
    let depths: Vec<f64> = masked.iter().map(|&i| e[i]).collect();
    let map = normalize_relative(&relative_depth(&depths)?, patch.temperature)?;
    println!("\nexpected depths of four supervised pixels: {depths:.2?}");
    println!("their normalized relative-depth rows (temperature {}):", patch.temperature);
    for j in 0..map.n() {
        println!("  {:.4?}", map.row(j));
    }
    Ok(())
}
