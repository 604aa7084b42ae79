use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose};

/// Minimum camera-frame depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

const UNDISTORT_ITERATIONS: usize = 10;
const UNDISTORT_TOLERANCE: f64 = 1e-10;

/// Radial-tangential (k1, k2, p1, p2) lens distortion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    /// Maps undistorted normalized coordinates to distorted ones.
    pub fn distort(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        Vector2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Jacobian of [`Distortion::distort`] at `p`.
    pub fn jacobian(&self, p: &Vector2<f64>) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let dradial = 2.0 * self.k1 + 4.0 * self.k2 * r2; // d radial / d r2 * 2
        Matrix2::new(
            radial + x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
            x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            radial + y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
        )
    }

    /// Inverts [`Distortion::distort`] by fixed-point iteration.
    pub fn undistort(&self, pd: &Vector2<f64>) -> Vector2<f64> {
        if self.is_zero() {
            return *pd;
        }
        let mut p = *pd;
        for _ in 0..UNDISTORT_ITERATIONS {
            let (x, y) = (p.x, p.y);
            let r2 = x * x + y * y;
            let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            let next = Vector2::new((pd.x - dx) / radial, (pd.y - dy) / radial);
            let step = (next - p).norm();
            p = next;
            if step < UNDISTORT_TOLERANCE {
                break;
            }
        }
        p
    }
}

/// Pinhole intrinsics with distortion and sensor size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub distortion: Distortion,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        CameraIntrinsics { fx, fy, cx, cy, distortion: Distortion::default(), width, height }
    }

    pub fn with_distortion(mut self, distortion: Distortion) -> Self {
        self.distortion = distortion;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics)
        }
    }

    /// Normalized (undistorted) image coordinates to pixels.
    pub fn normalized_to_pixel(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let d = self.distortion.distort(p);
        Vector2::new(self.cx + self.fx * d.x, self.cy + self.fy * d.y)
    }

    /// Pixels to normalized (undistorted) image coordinates.
    pub fn pixel_to_normalized(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let d = Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy);
        self.distortion.undistort(&d)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CameraKind {
    Frame { fps: f64 },
    Event,
}

impl CameraKind {
    pub fn fps(&self) -> Option<f64> {
        match self {
            CameraKind::Frame { fps } => Some(*fps),
            CameraKind::Event => None,
        }
    }

    pub fn is_event(&self) -> bool {
        matches!(self, CameraKind::Event)
    }
}

/// Intrinsics plus world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub kind: CameraKind,
}

impl CameraModel {
    pub fn new(name: impl Into<String>, intrinsics: CameraIntrinsics, pose: Pose, kind: CameraKind) -> Self {
        CameraModel { name: name.into(), intrinsics, pose, kind }
    }

    /// Unit ray direction in world coordinates through `pixel`.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        let n = self.intrinsics.pixel_to_normalized(pixel);
        let dir_cam = Vector3::new(n.x, n.y, 1.0).normalize();
        self.pose.rotation.inverse().rotate(&dir_cam)
    }

    /// World point at camera depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let n = self.intrinsics.pixel_to_normalized(pixel);
        let pc = Vector3::new(n.x * depth, n.y * depth, depth);
        self.pose.inverse().transform_point(&pc)
    }
}

/// Projects a world point to pixels. Points outside the sensor are returned
/// as-is; callers filter by [`CameraIntrinsics::contains`].
pub fn project(point: &Vector3<f64>, camera: &CameraModel) -> Result<Vector2<f64>, GeometryError> {
    project_camera_frame(&camera.pose.transform_point(point), &camera.intrinsics)
}

pub fn project_camera_frame(pc: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>, GeometryError> {
    if !(pc.z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera);
    }
    Ok(k.normalized_to_pixel(&Vector2::new(pc.x / pc.z, pc.y / pc.z)))
}

/// Projection of a camera-frame point with its 2x3 Jacobian with respect to
/// that point.
pub fn project_camera_frame_jacobian(
    pc: &Vector3<f64>,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, Matrix2x3<f64>), GeometryError> {
    if !(pc.z > MIN_DEPTH) {
        return Err(GeometryError::BehindCamera);
    }
    let iz = 1.0 / pc.z;
    let n = Vector2::new(pc.x * iz, pc.y * iz);
    let d = k.distortion.distort(&n);
    let px = Vector2::new(k.cx + k.fx * d.x, k.cy + k.fy * d.y);
    let dn = Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz);
    let jd = k.distortion.jacobian(&n);
    let f = Matrix2::new(k.fx, 0.0, 0.0, k.fy);
    Ok((px, f * jd * dn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use proptest::prelude::*;

    fn axis_camera() -> CameraModel {
        CameraModel::new(
            "cam",
            CameraIntrinsics::new(600.0, 600.0, 640.0, 360.0, 1280, 720),
            Pose::identity(),
            CameraKind::Event,
        )
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let px = project(&Vector3::new(0.0, 0.0, 2.0), &axis_camera()).unwrap();
        assert_eq!(px, Vector2::new(640.0, 360.0));
    }

    #[test]
    fn pinhole_offset() {
        let px = project(&Vector3::new(0.1, 0.0, 2.0), &axis_camera()).unwrap();
        assert!((px - Vector2::new(670.0, 360.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera_rejected() {
        assert_eq!(
            project(&Vector3::new(0.0, 0.0, -1.0), &axis_camera()),
            Err(GeometryError::BehindCamera)
        );
        assert_eq!(project(&Vector3::new(0.0, 0.0, 0.0), &axis_camera()), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(600.0, 600.0, 640.0, 360.0, 1280, 720).validate().is_ok());
        assert!(CameraIntrinsics::new(-1.0, 600.0, 640.0, 360.0, 1280, 720).validate().is_err());
        assert!(CameraIntrinsics::new(600.0, 600.0, 1280.0, 360.0, 1280, 720).validate().is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let k = CameraIntrinsics::new(900.0, 910.0, 640.0, 512.0, 1280, 1024).with_distortion(Distortion {
            k1: -0.08,
            k2: 0.01,
            p1: 0.001,
            p2: -0.0005,
        });
        let pc = Vector3::new(0.3, -0.2, 2.5);
        let (_, j) = project_camera_frame_jacobian(&pc, &k).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut a = pc;
            let mut b = pc;
            a[c] += h;
            b[c] -= h;
            let fd = (project_camera_frame(&a, &k).unwrap() - project_camera_frame(&b, &k).unwrap()) / (2.0 * h);
            assert!((fd - j.column(c)).norm() < 1e-4, "column {c}: {fd} vs {}", j.column(c));
        }
    }

    proptest! {
        #[test]
        fn unproject_project_round_trip(
            u in 0.0..1280.0f64, v in 0.0..1024.0f64, depth in 0.5..10.0f64,
            k1 in -0.05..0.05f64, k2 in -0.01..0.01f64, p1 in -0.001..0.001f64, p2 in -0.001..0.001f64,
            rx in -1.0..1.0f64, ry in -1.0..1.0f64, rz in -1.0..1.0f64,
        ) {
            let k = CameraIntrinsics::new(1100.0, 1100.0, 640.0, 512.0, 1280, 1024)
                .with_distortion(Distortion { k1, k2, p1, p2 });
            let pose = Pose::new(Rotation::from_rotation_vector(&Vector3::new(rx, ry, rz)), Vector3::new(0.1, -0.3, 2.0));
            let cam = CameraModel::new("c", k, pose, CameraKind::Frame { fps: 140.0 });
            let px = Vector2::new(u, v);
            let world = cam.unproject(&px, depth);
            let back = project(&world, &cam).unwrap();
            prop_assert!((back - px).norm() < 1e-6, "{} vs {}", back, px);
        }
    }
}
