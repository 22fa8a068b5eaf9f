//! Lift per-pixel context features from both cameras into a bird's-eye-view
//! grid using oracle depth distributions, then print the occupied cells.
//!
//! cargo run --example bev_lifting

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use depthaware::depth_target::build_sparse_depth_target;
use depthaware::lifting::{lift_views, CameraView, ContextFeatures};
use depthaware::scene::{fabricate_prediction, synthesize_scene, PredMode, SceneSpec};

fn main() -> depthaware::Result<()> {
    let spec = SceneSpec { context_channels: 1, ..Default::default() };
    let scene = synthesize_scene(&spec)?;
    let [h, w] = spec.feature_grid;
    let bins = spec.depth_bins()?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut preds = Vec::new();
    let mut ctxs = Vec::new();
    for cam in &spec.cameras {
        let target = build_sparse_depth_target(&scene.cloud, cam, bins, (h, w))?;
        preds.push(fabricate_prediction(&target, PredMode::Oracle, &mut rng)?);
        // unit feature on supervised pixels
        let data = (0..h * w).map(|i| if target.is_masked(i) { 1.0 } else { 0.0 }).collect();
        ctxs.push(ContextFeatures::new(h, w, 1, data)?);
    }
    let views: Vec<CameraView<'_>> = preds
        .iter()
        .zip(&ctxs)
        .zip(&spec.cameras)
        .map(|((pred, ctx), cam)| CameraView { pred, ctx, cam })
        .collect();
    let bev = lift_views(&views, bins, &spec.bev_template()?)?;

    let total: f64 = bev.features().iter().sum();
    let supervised: f64 = ctxs.iter().map(|c| c.data().iter().sum::<f64>()).sum();
    println!("{supervised} supervised pixels, {total:.1} units of mass inside the grid");
    println!("rows run along ego x (front at the top), columns along ego y; '#' > 2, '+' > 0.5, '.' > 0\n");
    for r in (0..bev.rows()).rev().step_by(2) {
        let line: String = (0..bev.cols())
            .rev()
            .map(|c| match bev.cell(r, c)[0] {
                v if v > 2.0 => '#',
                v if v > 0.5 => '+',
                v if v > 0.0 => '.',
                _ => ' ',
            })
            .collect();
        println!("|{line}|");
    }
    for t in &scene.targets {
        println!("box at x {:6.2}, y {:6.2}", t.bbox.center.x, t.bbox.center.y);
    }
    Ok(())
}
