//! Randomized invariants.

use approx::assert_relative_eq;
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

use depthaware::denoise::{generate_noised_anchors, DetectionTarget, NoiseConfig};
use depthaware::depth_target::DepthBins;
use depthaware::geometry::{project, unproject, Box3, CameraModel, Point3};
use depthaware::losses::{normalize_relative, relative_depth, relative_depth_loss};

fn camera(yaw: f64, f: f64, center: [f64; 3]) -> CameraModel {
    let base = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
    let r = base * Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix().transpose();
    let k = Matrix3::new(f, 0.0, 800.0, 0.0, f, 450.0, 0.0, 0.0, 1.0);
    CameraModel::from_pose(k, r, Point3::new(center[0], center[1], center[2]), (900, 1600)).unwrap()
}

proptest! {
    #[test]
    fn project_unproject_round_trip(
        yaw in -3.1f64..3.1,
        f in 300.0f64..2000.0,
        center in prop::array::uniform3(-2.0f64..2.0),
        fwd in 0.5f64..80.0,
        side in -30.0f64..30.0,
        up in -5.0f64..5.0,
    ) {
        let cam = camera(yaw, f, center);
        let p = Point3::new(
            center[0] + fwd * yaw.cos() - side * yaw.sin(),
            center[1] + fwd * yaw.sin() + side * yaw.cos(),
            center[2] + up,
        );
        let pd = project(&cam, p).unwrap();
        assert_relative_eq!(pd.d, fwd, max_relative = 1e-9);
        let back = unproject(&cam, pd).unwrap();
        prop_assert!((back.to_vector() - p.to_vector()).amax() < 1e-8);
    }

    #[test]
    fn normalized_rows_are_distributions(
        depths in prop::collection::vec(0.0f64..150.0, 2..20),
        tau in 0.2f64..30.0,
    ) {
        let m = normalize_relative(&relative_depth(&depths).unwrap(), tau).unwrap();
        for j in 0..depths.len() {
            let row = m.row(j);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v <= row[j]));
        }
    }

    #[test]
    fn relative_loss_is_nonnegative_and_shift_invariant(
        pairs in prop::collection::vec((0.0f64..120.0, 0.0f64..120.0), 2..16),
        tau in 0.5f64..20.0,
        shift in -10.0f64..10.0,
    ) {
        let (pred, gt): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = relative_depth_loss(&pred, &gt, tau).unwrap();
        prop_assert!(base.loss >= -1e-15);
        let shifted: Vec<f64> = pred.iter().map(|x| x + shift).collect();
        let moved = relative_depth_loss(&shifted, &gt, tau).unwrap();
        prop_assert!((moved.loss - base.loss).abs() < 1e-12);
        prop_assert!(base.grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn bins_round_trip(num_bins in 2usize..200, c in 1usize..200) {
        let bins = DepthBins::new(num_bins).unwrap();
        let c = c.min(num_bins);
        prop_assert_eq!(bins.bin_of(bins.depth_of(c)), Some(c as u32));
    }

    #[test]
    fn anchor_factors_stay_in_range(
        seed in any::<u64>(),
        dd in 0.0f64..0.99,
        ds in 0.0f64..0.99,
        dl in 0.0f64..0.99,
        groups in 1usize..5,
    ) {
        let targets = vec![DetectionTarget {
            bbox: Box3::new(Point3::new(5.0, -3.0, 1.0), 2.0, 4.0, 1.5).unwrap(),
            class_label: 1,
        }];
        let cfg = NoiseConfig { delta_d: dd, delta_s: ds, delta_l: dl, groups, seed };
        for a in generate_noised_anchors(&targets, &cfg).unwrap() {
            prop_assert!((a.sigmas.depth - 1.0).abs() < dd || (dd == 0.0 && a.sigmas.depth == 1.0));
            prop_assert!((a.sigmas.scale - 1.0).abs() < ds || (ds == 0.0 && a.sigmas.scale == 1.0));
            prop_assert!((a.sigmas.location - 1.0).abs() < dl || (dl == 0.0 && a.sigmas.location == 1.0));
            prop_assert!(a.anchor.validate().is_ok());
        }
    }
}
