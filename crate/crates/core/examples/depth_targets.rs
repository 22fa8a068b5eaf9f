//! Build sparse depth targets for both cameras of a synthetic scene and draw
//! the front one as text (`.` = no supervision, digits = depth bin / 12).
//!
//! cargo run --example depth_targets [seed]

use depthaware::depth_target::build_sparse_depth_target;
use depthaware::scene::{synthesize_scene, SceneSpec};

fn main() -> depthaware::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SceneSpec { seed, ..Default::default() };
    let scene = synthesize_scene(&spec)?;
    let [h, w] = spec.feature_grid;

    println!("{} points, {} boxes", scene.cloud.len(), scene.targets.len());
    for t in &scene.targets {
        println!("  class {} at ({:6.2}, {:6.2}, {:4.2})", t.class_label, t.bbox.center.x, t.bbox.center.y, t.bbox.center.z);
    }

    for (k, cam) in spec.cameras.iter().enumerate() {
        let target = build_sparse_depth_target(&scene.cloud, cam, spec.depth_bins()?, (h, w))?;
        println!(
            "\ncamera {k}: {} of {} cells supervised ({:.1}%)",
            target.mask_count(),
            h * w,
            100.0 * target.mask_count() as f64 / (h * w) as f64
        );
        if k == 0 {
            for r in (0..h).step_by(2) {
                let line: String = (0..w)
                    .map(|c| match target.depth_at(r * w + c) {
                        Some(d) => char::from_digit(((d as u32) / 12).min(9), 10).unwrap(),
                        None => '.',
                    })
                    .collect();
                println!("  {line}");
            }
        }
    }
    Ok(())
}
