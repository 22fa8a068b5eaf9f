//! Noised reference anchors for denoising queries, and how the
//! reconstruction loss of an identity head grows with the depth noise.
//!
//! cargo run --example noised_anchors

use depthaware::denoise::{generate_noised_anchors, identity_head, reconstruction_loss, NoiseConfig};
use depthaware::scene::{synthesize_scene, SceneSpec};

fn main() -> depthaware::Result<()> {
    let spec = SceneSpec::default();
    let scene = synthesize_scene(&spec)?;
    let num_classes = spec.categories.len();

    let cfg = NoiseConfig { groups: 2, seed: 7, ..Default::default() };
    println!("depth/scale/location noise {}/{}/{}, {} groups\n", cfg.delta_d, cfg.delta_s, cfg.delta_l, cfg.groups);
    println!("{:>3} {:>5} {:>7} {:>7} {:>7}   {:>28}   {:>28}", "src", "class", "s_d", "s_s", "s_l", "ground-truth center", "anchor center");
    for a in generate_noised_anchors(&scene.targets, &cfg)? {
        let gt = scene.targets[a.source_index].bbox.center;
        let c = a.anchor.center;
        println!(
            "{:>3} {:>5} {:7.4} {:7.4} {:7.4}   ({:7.2}, {:7.2}, {:6.2})   ({:7.2}, {:7.2}, {:6.2})",
            a.source_index, a.class_label, a.sigmas.depth, a.sigmas.scale, a.sigmas.location, gt.x, gt.y, gt.z, c.x, c.y, c.z
        );
    }

    println!("\nidentity-head reconstruction loss, 16 groups:");
    for delta_d in [0.0, 0.1, 0.25, 0.5, 0.75] {
        let cfg = NoiseConfig { delta_d, delta_s: 0.0, delta_l: 0.0, groups: 16, seed: 7 };
        let anchors = generate_noised_anchors(&scene.targets, &cfg)?;
        let rcl = reconstruction_loss(&anchors, &identity_head(&anchors, num_classes), &scene.targets)?;
        println!("  delta_d {delta_d:.2}: {:.4}", rcl.loss);
    }
    Ok(())
}
