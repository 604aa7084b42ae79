//! Camera models, rigid transforms, projection, triangulation and
//! reprojection-error metrics.
//!
//! Conventions: world frame at the table center with `z` up; camera frames
//! are `x` right, `y` down, `z` along the optical axis. [`Pose`] maps world
//! to camera coordinates.

mod camera;
mod rig;
mod rotation;
mod triangulate;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

pub use camera::{
    project, project_camera_frame, project_camera_frame_jacobian, CameraIntrinsics, CameraKind, CameraModel,
    Distortion, MIN_DEPTH,
};
pub use rig::{Rig, RigFile, RIG_SCHEMA_VERSION};
pub use rotation::{Pose, Rotation};
pub use triangulate::{refine_point, triangulate, MIN_RAY_ANGLE_DEG};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("rays are nearly parallel")]
    DegenerateGeometry,
    #[error("at least two observations are required")]
    InsufficientObservations,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid rotation")]
    InvalidRotation,
    #[error("invalid camera intrinsics")]
    InvalidIntrinsics,
    #[error("invalid rig: {0}")]
    InvalidRig(String),
}

/// Mean and population standard deviation of a set of pixel residuals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl ErrorStats {
    pub fn from_values(values: &[f64]) -> Option<ErrorStats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(ErrorStats { count: values.len(), mean, std: var.max(0.0).sqrt() })
    }
}

/// A pixel detection of `points[i]` in camera `camera`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub camera: usize,
    pub pixel: Vector2<f64>,
}

/// Per-camera mean and standard deviation of the Euclidean reprojection
/// residuals. `detections[i]` pairs with `points[i]`; the result is indexed
/// by camera and is `None` for cameras without detections.
pub fn reprojection_mae(
    cameras: &[CameraModel],
    points: &[Vector3<f64>],
    detections: &[Detection],
) -> Result<Vec<Option<ErrorStats>>, GeometryError> {
    if points.is_empty() || points.len() != detections.len() {
        return Err(GeometryError::EmptyInput);
    }
    let mut residuals = vec![Vec::new(); cameras.len()];
    for (p, d) in points.iter().zip(detections) {
        let cam = cameras.get(d.camera).ok_or_else(|| GeometryError::InvalidRig(format!("camera {}", d.camera)))?;
        residuals[d.camera].push((project(p, cam)? - d.pixel).norm());
    }
    Ok(residuals.iter().map(|r| ErrorStats::from_values(r)).collect())
}
