use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, CameraKind, CameraModel, Distortion, GeometryError, Pose};

pub const RIG_SCHEMA_VERSION: u32 = 1;

/// Ordered set of cameras with a gauge camera whose pose defines the world
/// frame after calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub cameras: Vec<CameraModel>,
    pub gauge: usize,
}

impl Rig {
    pub fn new(cameras: Vec<CameraModel>, gauge: usize) -> Result<Rig, GeometryError> {
        let rig = Rig { cameras, gauge };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.cameras.is_empty() {
            return Err(GeometryError::InvalidRig("no cameras".into()));
        }
        if self.gauge >= self.cameras.len() {
            return Err(GeometryError::InvalidRig(format!("gauge index {} out of range", self.gauge)));
        }
        for cam in &self.cameras {
            cam.intrinsics.validate()?;
            if let CameraKind::Frame { fps } = cam.kind {
                if !(fps > 0.0) {
                    return Err(GeometryError::InvalidRig(format!("camera {} has non-positive fps", cam.name)));
                }
            }
        }
        Ok(())
    }

    /// The calibration rig around the table: four 140 fps frame cameras
    /// (1280x1024) at the corners with 3 m, 4 m and 5 m baselines, and two
    /// 1280x720 event cameras on the long sides. World frame: table center,
    /// `z` up.
    pub fn table_tennis_default() -> Rig {
        let target = Vector3::new(0.0, 0.0, 0.5);
        let up = Vector3::z();
        let frame_k = CameraIntrinsics::new(1100.0, 1100.0, 640.0, 512.0, 1280, 1024)
            .with_distortion(Distortion { k1: -0.06, k2: 0.01, p1: 0.0005, p2: -0.0003 });
        let event_k = CameraIntrinsics::new(1000.0, 1000.0, 640.0, 360.0, 1280, 720)
            .with_distortion(Distortion { k1: -0.04, k2: 0.005, p1: 0.0, p2: 0.0 });
        let mut cameras = Vec::new();
        let corners = [(2.0, 1.5), (-2.0, 1.5), (-2.0, -1.5), (2.0, -1.5)];
        for (i, (x, y)) in corners.into_iter().enumerate() {
            let eye = Vector3::new(x, y, 2.6);
            cameras.push(CameraModel::new(
                format!("frame_{i}"),
                frame_k,
                Pose::look_at(&eye, &target, &up),
                CameraKind::Frame { fps: 140.0 },
            ));
        }
        for (i, y) in [2.4, -2.4].into_iter().enumerate() {
            let eye = Vector3::new(0.3, y, 1.6);
            cameras.push(CameraModel::new(
                format!("event_{i}"),
                event_k,
                Pose::look_at(&eye, &target, &up),
                CameraKind::Event,
            ));
        }
        Rig { cameras, gauge: 0 }
    }

    /// Ceiling-mounted 350 fps, 1920x1200 camera used for spin estimation.
    pub fn spin_camera() -> CameraModel {
        let eye = Vector3::new(0.0, 0.0, 3.0);
        CameraModel::new(
            "spin_0",
            CameraIntrinsics::new(2400.0, 2400.0, 960.0, 600.0, 1920, 1200),
            Pose::look_at(&eye, &Vector3::new(0.0, 0.0, 0.0), &Vector3::y()),
            CameraKind::Frame { fps: 350.0 },
        )
    }

    /// Re-expresses all poses so the gauge camera becomes the identity.
    pub fn gauge_aligned(&self) -> Rig {
        let g_inv = self.cameras[self.gauge].pose.inverse();
        let cameras = self
            .cameras
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.pose = c.pose.compose(&g_inv);
                c
            })
            .collect();
        Rig { cameras, gauge: self.gauge }
    }

    pub fn to_file(&self) -> RigFile {
        RigFile {
            schema: RIG_SCHEMA_VERSION,
            gauge: self.gauge,
            cameras: self
                .cameras
                .iter()
                .map(|c| CameraEntry { name: c.name.clone(), kind: c.kind, intrinsics: c.intrinsics, pose: c.pose })
                .collect(),
        }
    }

    pub fn from_file(file: RigFile) -> Result<Rig, GeometryError> {
        if file.schema != RIG_SCHEMA_VERSION {
            return Err(GeometryError::InvalidRig(format!("unsupported schema {}", file.schema)));
        }
        let cameras = file
            .cameras
            .into_iter()
            .map(|e| CameraModel::new(e.name, e.intrinsics, e.pose, e.kind))
            .collect();
        Rig::new(cameras, file.gauge)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("rig serializes")
    }

    pub fn from_json(s: &str) -> Result<Rig, GeometryError> {
        let file: RigFile = serde_json::from_str(s).map_err(|e| GeometryError::InvalidRig(e.to_string()))?;
        Rig::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Rig, GeometryError> {
        let s = std::fs::read_to_string(path).map_err(|e| GeometryError::InvalidRig(format!("{}: {e}", path.display())))?;
        Rig::from_json(&s)
    }
}

/// On-disk rig document:
///
/// ```json
/// { "schema": 1, "gauge": 0,
///   "cameras": [ { "name": "frame_0", "kind": "frame", "fps": 140.0,
///                  "intrinsics": { "fx": .., "fy": .., "cx": .., "cy": ..,
///                                  "distortion": { "k1": .., "k2": .., "p1": .., "p2": .. },
///                                  "width": 1280, "height": 1024 },
///                  "pose": { "rotation": [w, x, y, z], "translation": [x, y, z] } } ] }
/// ```
///
/// `kind` is `"frame"` (with `fps`) or `"event"` (no `fps`). Poses map world
/// to camera coordinates; translations are in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    pub schema: u32,
    pub gauge: usize,
    pub cameras: Vec<CameraEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub name: String,
    #[serde(flatten)]
    pub kind: CameraKind,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}
