//! Pinhole camera model, ego-frame points and axis-aligned boxes.
//!
//! Projection is factored as `K · (R · p + t)`: a rigid ego→camera transform
//! followed by the upper-triangular intrinsics `K`. Depth always means the
//! camera-frame `z` coordinate (distance along the optical axis).
//!
//! Scaling the depth of a pixel scales the *camera-frame* point exactly. With
//! a camera at the ego origin (`R = I`, `t = 0`) the same holds in the ego
//! frame; with a nonzero translation the scaling acts about the camera
//! center instead of the ego origin.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points with camera-frame depth at or below this are not projected.
pub const MIN_DEPTH: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// A 3D point in meters, ego frame unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

impl From<[f64; 3]> for Point3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Self { x, y, z }
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

impl From<Vector3<f64>> for Point3 {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Continuous pixel coordinates plus depth along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

/// Axis-aligned 3D box. `w`, `l`, `h` are the full extents along x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct Box3 {
    pub center: Point3,
    pub w: f64,
    pub l: f64,
    pub h: f64,
}

impl Box3 {
    pub fn new(center: Point3, w: f64, l: f64, h: f64) -> Result<Self> {
        let b = Self { center, w, l, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self> {
        Self::new(Point3::new(a[0], a[1], a[2]), a[3], a[4], a[5])
    }

    /// `(x, y, z, w, l, h)`.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.w,
            self.l,
            self.h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() || !(self.w.is_finite() && self.l.is_finite() && self.h.is_finite()) {
            return Err(Error::NonFinite("box"));
        }
        if self.w <= 0.0 || self.l <= 0.0 || self.h <= 0.0 {
            return Err(Error::param(
                "box size",
                format!("w, l, h must be positive, got ({}, {}, {})", self.w, self.l, self.h),
            ));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    pub fn min_corner(&self) -> Point3 {
        Point3::new(
            self.center.x - self.w / 2.0,
            self.center.y - self.l / 2.0,
            self.center.z - self.h / 2.0,
        )
    }

    pub fn max_corner(&self) -> Point3 {
        Point3::new(
            self.center.x + self.w / 2.0,
            self.center.y + self.l / 2.0,
            self.center.z + self.h / 2.0,
        )
    }
}

impl TryFrom<[f64; 6]> for Box3 {
    type Error = Error;

    fn try_from(a: [f64; 6]) -> Result<Self> {
        Self::from_array(a)
    }
}

impl From<Box3> for [f64; 6] {
    fn from(b: Box3) -> Self {
        b.to_array()
    }
}

/// The eight corners `center ± size/2`, ordered with x varying slowest.
pub fn box_corners(b: &Box3) -> [Point3; 8] {
    let (hw, hl, hh) = (b.w / 2.0, b.l / 2.0, b.h / 2.0);
    let c = b.center;
    let mut out = [Point3::default(); 8];
    let mut i = 0;
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                out[i] = Point3::new(c.x + sx * hw, c.y + sy * hl, c.z + sz * hh);
                i += 1;
            }
        }
    }
    out
}

/// A ray in the ego frame: `origin + d * direction` is the point whose
/// camera-frame depth is `d`.
#[derive(Debug, Clone, Copy)]
pub struct EgoRay {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl EgoRay {
    pub fn at(&self, d: f64) -> Point3 {
        (self.origin + self.direction * d).into()
    }
}

/// Pinhole camera: intrinsics `K` and an ego→camera rigid transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraModelRepr", into = "CameraModelRepr")]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    intrinsics_inv: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    /// `(height, width)` in pixels.
    image_size: (usize, usize),
}

impl CameraModel {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_size: (usize, usize),
    ) -> Result<Self> {
        if intrinsics.iter().chain(rotation.iter()).chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera parameters"));
        }
        let k = &intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::param("intrinsics", "must be upper-triangular"));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 || k[(2, 2)] <= 0.0 {
            return Err(Error::param("intrinsics", "diagonal entries must be positive"));
        }
        let gram = rotation.transpose() * rotation;
        if (gram - Matrix3::identity()).amax() > ORTHONORMAL_TOL {
            return Err(Error::param("rotation", "must be orthonormal"));
        }
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::param("image_size", "height and width must be at least 1"));
        }
        Ok(Self {
            intrinsics,
            intrinsics_inv: upper_triangular_inverse(&intrinsics),
            rotation,
            translation,
            image_size,
        })
    }

    /// Camera at the ego origin looking down the ego `+z` axis.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, image_size: (usize, usize)) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Self::new(k, Matrix3::identity(), Vector3::zeros(), image_size)
    }

    /// Builds the extrinsics from the ego→camera rotation and the camera
    /// center expressed in ego coordinates.
    pub fn from_pose(
        intrinsics: Matrix3<f64>,
        ego_to_camera: Matrix3<f64>,
        center: Point3,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let t = -(ego_to_camera * center.to_vector());
        Self::new(intrinsics, ego_to_camera, t, image_size)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn ego_to_camera(&self, p: Point3) -> Point3 {
        (self.rotation * p.to_vector() + self.translation).into()
    }

    pub fn camera_to_ego(&self, p: Point3) -> Point3 {
        (self.rotation.transpose() * (p.to_vector() - self.translation)).into()
    }

    /// Ray through pixel `(u, v)` parameterized by camera-frame depth.
    pub fn ego_ray(&self, u: f64, v: f64) -> EgoRay {
        let rt = self.rotation.transpose();
        EgoRay {
            origin: -(rt * self.translation),
            direction: rt * self.camera_ray(u, v),
        }
    }

    /// `K⁻¹ [u, v, 1]ᵀ` rescaled to unit depth.
    fn camera_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let r = self.intrinsics_inv * Vector3::new(u, v, 1.0);
        r / r.z
    }
}

/// Projects an ego point to pixel coordinates and optical-axis depth.
///
/// Returns `None` when the camera-frame depth is not above [`MIN_DEPTH`].
/// The pixel may fall outside the image.
pub fn project(cam: &CameraModel, p: Point3) -> Option<PixelDepth> {
    let pc = cam.rotation * p.to_vector() + cam.translation;
    if pc.z.is_nan() || pc.z <= MIN_DEPTH {
        return None;
    }
    let h = cam.intrinsics * pc;
    Some(PixelDepth {
        u: h.x / h.z,
        v: h.y / h.z,
        d: pc.z,
    })
}

/// Inverse of [`project`], returning the camera-frame point.
pub fn unproject_camera_frame(cam: &CameraModel, pd: PixelDepth) -> Result<Point3> {
    check_depth(pd.d)?;
    Ok((cam.camera_ray(pd.u, pd.v) * pd.d).into())
}

/// Inverse of [`project`]: the ego point seen at `(u, v)` with depth `d`.
pub fn unproject(cam: &CameraModel, pd: PixelDepth) -> Result<Point3> {
    let pc = unproject_camera_frame(cam, pd)?;
    Ok(cam.camera_to_ego(pc))
}

fn check_depth(d: f64) -> Result<()> {
    if !d.is_finite() {
        return Err(Error::NonFinite("depth"));
    }
    if d <= 0.0 {
        return Err(Error::param("depth", format!("must be positive, got {d}")));
    }
    Ok(())
}

fn upper_triangular_inverse(k: &Matrix3<f64>) -> Matrix3<f64> {
    let (a, b, c) = (k[(0, 0)], k[(0, 1)], k[(0, 2)]);
    let (d, e) = (k[(1, 1)], k[(1, 2)]);
    let f = k[(2, 2)];
    Matrix3::new(
        1.0 / a,
        -b / (a * d),
        (b * e - c * d) / (a * d * f),
        0.0,
        1.0 / d,
        -e / (d * f),
        0.0,
        0.0,
        1.0 / f,
    )
}

#[derive(Serialize, Deserialize)]
struct CameraModelRepr {
    /// Row-major 3×3.
    intrinsics: [[f64; 3]; 3],
    /// Row-major 3×3 ego→camera rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    /// `[height, width]`.
    image_size: [usize; 2],
}

fn rows_to_matrix(m: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| m[r][c])
}

fn matrix_to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

impl TryFrom<CameraModelRepr> for CameraModel {
    type Error = Error;

    fn try_from(r: CameraModelRepr) -> Result<Self> {
        CameraModel::new(
            rows_to_matrix(r.intrinsics),
            rows_to_matrix(r.rotation),
            Vector3::from(r.translation),
            (r.image_size[0], r.image_size[1]),
        )
    }
}

impl From<CameraModel> for CameraModelRepr {
    fn from(c: CameraModel) -> Self {
        Self {
            intrinsics: matrix_to_rows(&c.intrinsics),
            rotation: matrix_to_rows(&c.rotation),
            translation: c.translation.into(),
            image_size: [c.image_size.0, c.image_size.1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_cam() -> CameraModel {
        CameraModel::pinhole(1.0, 1.0, 0.0, 0.0, (1, 1)).unwrap()
    }

    fn random_cam(rng: &mut ChaCha8Rng) -> CameraModel {
        let k = Matrix3::new(
            rng.random_range(200.0..2000.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(100.0..900.0),
            0.0,
            rng.random_range(200.0..2000.0),
            rng.random_range(100.0..600.0),
            0.0,
            0.0,
            1.0,
        );
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        );
        let t = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        CameraModel::new(k, *rot.matrix(), t, (900, 1600)).unwrap()
    }

    #[test]
    fn principal_ray() {
        let pd = project(&identity_cam(), Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((pd.u, pd.v, pd.d), (0.0, 0.0, 5.0));
        let p = unproject(&identity_cam(), PixelDepth { u: 0.0, v: 0.0, d: 5.0 }).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn degenerate_depth_is_not_projected() {
        let cam = identity_cam();
        assert!(project(&cam, Point3::new(1.0, 2.0, 0.0)).is_none());
        assert!(project(&cam, Point3::new(1.0, 2.0, -3.0)).is_none());
        assert!(project(&cam, Point3::new(1.0, 2.0, 1e-10)).is_none());
    }

    #[test]
    fn unproject_rejects_non_positive_depth() {
        let cam = identity_cam();
        for d in [0.0, -1.0] {
            assert!(unproject(&cam, PixelDepth { u: 1.0, v: 1.0, d }).is_err());
        }
        assert!(matches!(
            unproject(&cam, PixelDepth { u: 1.0, v: 1.0, d: f64::NAN }),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn random_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let cam = random_cam(&mut rng);
            // sample in camera frame so the point is guaranteed in front
            let pc = Point3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(0.5..100.0),
            );
            let p = cam.camera_to_ego(pc);
            let pd = project(&cam, p).unwrap();
            let back = unproject(&cam, pd).unwrap();
            worst = worst
                .max((back.x - p.x).abs())
                .max((back.y - p.y).abs())
                .max((back.z - p.z).abs());
            let again = project(&cam, back).unwrap();
            assert!((again.u - pd.u).abs() < 1e-9 * pd.u.abs().max(1.0));
            assert!((again.v - pd.v).abs() < 1e-9 * pd.v.abs().max(1.0));
            assert!((again.d - pd.d).abs() < 1e-9);
        }
        assert!(worst < 1e-9, "max round-trip error {worst}");
    }

    #[test]
    fn depth_scaling_is_exact_in_camera_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let cam = random_cam(&mut rng);
            let pd = PixelDepth {
                u: rng.random_range(0.0..1600.0),
                v: rng.random_range(0.0..900.0),
                d: rng.random_range(1.0..80.0),
            };
            let s = rng.random_range(0.5..1.5);
            let a = unproject_camera_frame(&cam, PixelDepth { d: pd.d * s, ..pd }).unwrap();
            let b = unproject_camera_frame(&cam, pd).unwrap().scaled(s);
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9 && (a.z - b.z).abs() < 1e-9);
        }
    }

    #[test]
    fn depth_scaling_about_camera_center_with_translation() {
        // With a translated camera the ego point scales about the camera center.
        let cam = CameraModel::from_pose(
            Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0),
            Matrix3::identity(),
            Point3::new(1.0, -2.0, 0.5),
            (480, 640),
        )
        .unwrap();
        let pd = PixelDepth { u: 100.0, v: 50.0, d: 10.0 };
        let p = unproject(&cam, pd).unwrap().to_vector();
        let q = unproject(&cam, PixelDepth { d: 20.0, ..pd }).unwrap().to_vector();
        let c = Vector3::new(1.0, -2.0, 0.5);
        assert!(((q - c) - (p - c) * 2.0).amax() < 1e-12);
        assert!((q - p * 2.0).amax() > 0.1);
    }

    #[test]
    fn ego_ray_matches_unproject() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = random_cam(&mut rng);
        let ray = cam.ego_ray(400.0, 300.0);
        for d in [1.0, 7.5, 60.0] {
            let a = ray.at(d).to_vector();
            let b = unproject(&cam, PixelDepth { u: 400.0, v: 300.0, d }).unwrap().to_vector();
            assert!((a - b).amax() < 1e-9);
        }
    }

    #[test]
    fn camera_validation() {
        let k = Matrix3::new(500.0, 0.0, 1.0, 0.0, 500.0, 1.0, 0.0, 0.0, 1.0);
        let mut bad_k = k;
        bad_k[(1, 0)] = 0.1;
        assert!(CameraModel::new(bad_k, Matrix3::identity(), Vector3::zeros(), (1, 1)).is_err());
        let mut neg_k = k;
        neg_k[(0, 0)] = -1.0;
        assert!(CameraModel::new(neg_k, Matrix3::identity(), Vector3::zeros(), (1, 1)).is_err());
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraModel::new(k, skewed, Vector3::zeros(), (1, 1)).is_err());
        assert!(CameraModel::new(k, Matrix3::identity(), Vector3::zeros(), (0, 4)).is_err());
    }

    #[test]
    fn camera_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cam = random_cam(&mut rng);
        let json = serde_json::to_string(&cam).unwrap();
        let back: CameraModel = serde_json::from_str(&json).unwrap();
        assert_eq!(cam.intrinsics(), back.intrinsics());
        assert_eq!(cam.rotation(), back.rotation());
        assert_eq!(cam.image_size(), back.image_size());
        let bad = json.replace("\"image_size\":[900,1600]", "\"image_size\":[0,1600]");
        assert!(serde_json::from_str::<CameraModel>(&bad).is_err());
    }

    #[test]
    fn unit_box_corners() {
        let b = Box3::new(Point3::default(), 1.0, 1.0, 1.0).unwrap();
        let corners = box_corners(&b);
        assert_eq!(corners.len(), 8);
        for c in &corners {
            assert_eq!(c.x.abs(), 0.5);
            assert_eq!(c.y.abs(), 0.5);
            assert_eq!(c.z.abs(), 0.5);
        }
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert_ne!(corners[i], corners[j]);
            }
        }
    }

    #[test]
    fn corners_span_box_size_and_average_to_center() {
        let b = Box3::new(Point3::new(3.0, -1.0, 0.5), 4.0, 2.0, 1.5).unwrap();
        let cs = box_corners(&b);
        let span = |f: fn(&Point3) -> f64| {
            let max = cs.iter().map(f).fold(f64::MIN, f64::max);
            let min = cs.iter().map(f).fold(f64::MAX, f64::min);
            max - min
        };
        assert_eq!(span(|p| p.x), 4.0);
        assert_eq!(span(|p| p.y), 2.0);
        assert_eq!(span(|p| p.z), 1.5);
        let mean = cs.iter().fold(Vector3::zeros(), |acc, p| acc + p.to_vector()) / 8.0;
        assert!((mean - b.center.to_vector()).amax() < 1e-15);
    }

    #[test]
    fn scaling_all_box_fields_scales_corners() {
        let b = Box3::new(Point3::new(1.0, 2.0, 3.0), 1.0, 2.0, 0.5).unwrap();
        let s = 1.7;
        let scaled = Box3::new(b.center.scaled(s), b.w * s, b.l * s, b.h * s).unwrap();
        for (a, c) in box_corners(&b).iter().zip(box_corners(&scaled).iter()) {
            assert!((a.scaled(s).to_vector() - c.to_vector()).amax() < 1e-12);
        }
    }

    #[test]
    fn box_rejects_non_positive_size() {
        assert!(Box3::new(Point3::default(), 0.0, 1.0, 1.0).is_err());
        assert!(Box3::from_array([0.0, 0.0, 0.0, 1.0, -1.0, 1.0]).is_err());
        assert!(serde_json::from_str::<Box3>("[0,0,0,1,1,0]").is_err());
        let b: Box3 = serde_json::from_str("[1,2,3,4,5,6]").unwrap();
        assert_eq!(b.to_array(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
