//! Project the corners of a box into the front camera, lift them back out,
//! and show that scaling the depth scales the camera-frame point.
//!
//! cargo run --example project_roundtrip

use depthaware::geometry::{box_corners, project, unproject, unproject_camera_frame, Box3, PixelDepth, Point3};
use depthaware::scene::surround_camera;

fn main() -> depthaware::Result<()> {
    let cam = surround_camera(false);
    let car = Box3::new(Point3::new(18.0, -2.5, 0.8), 4.5, 1.9, 1.6)?;

    println!("{:>8} {:>8} {:>8}   {:>8} {:>8} {:>7}   round-trip err", "x", "y", "z", "u", "v", "depth");
    for p in box_corners(&car) {
        let pd = project(&cam, p).expect("corner in front of the camera");
        let back = unproject(&cam, pd)?;
        let err = (back.to_vector() - p.to_vector()).amax();
        println!(
            "{:8.3} {:8.3} {:8.3}   {:8.2} {:8.2} {:7.3}   {err:.1e}",
            p.x, p.y, p.z, pd.u, pd.v, pd.d
        );
    }

    let pd = project(&cam, car.center).unwrap();
    let base = unproject_camera_frame(&cam, pd)?;
    println!("\ncenter pixel ({:.2}, {:.2}) at depth {:.3}", pd.u, pd.v, pd.d);
    for sigma in [0.5, 0.8, 1.2, 1.5] {
        let scaled = unproject_camera_frame(&cam, PixelDepth { d: sigma * pd.d, ..pd })?;
        let err = (scaled.to_vector() - base.scaled(sigma).to_vector()).amax();
        println!(
            "  sigma {sigma:.1}: camera-frame point ({:.3}, {:.3}, {:.3}), |P(sigma d) - sigma P(d)| = {err:.1e}",
            scaled.x, scaled.y, scaled.z
        );
    }
    Ok(())
}
