//! Wand-based extrinsic calibration: three collinear blinking markers are
//! identified by blink frequency, camera poses are initialized from
//! pairwise epipolar geometry and refined by bundle adjustment.

mod ba;
mod blink;
mod capture;
mod init;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ErrorStats, GeometryError, Rig};

pub use ba::{bundle_adjust, reprojection_stats, BaSettings, CalibrationResult};
pub use blink::{
    alias_frequency, classify_event_bursts, classify_frame_timeline, classify_rate, frame_timeline, BlinkModel,
    Classification,
};
pub use capture::{localize_marker_events, random_wand_poses, simulate_wand_capture, simulate_led_events, CaptureSettings, WandCapture};
pub use init::{initial_wand_poses, initialize_extrinsics, MIN_COMMON_SAMPLES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("invalid wand: {0}")]
    InvalidWand(String),
    #[error("marker {marker} is never visible in camera {camera}")]
    NoVisibility { camera: usize, marker: usize },
    #[error("ambiguous blink frequency: margin {margin:.2} Hz below {required:.2} Hz")]
    AmbiguousFrequency { margin: f64, required: f64 },
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("camera {0} shares too few samples with the gauge camera")]
    InsufficientCorrespondences(usize),
    #[error("degenerate wand motion")]
    DegenerateMotion,
    #[error("optimization diverged")]
    DivergedOptimization,
    #[error("singular normal equations")]
    SingularNormalEquations,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(String),
}

/// Three collinear markers at `offsets` along the wand axis, blinking at
/// `frequencies` Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WandGeometry {
    pub offsets: [f64; 3],
    pub frequencies: [f64; 3],
}

impl Default for WandGeometry {
    fn default() -> Self {
        WandGeometry { offsets: [0.0, 0.15, 0.40], frequencies: [125.0, 200.0, 333.0] }
    }
}

impl WandGeometry {
    pub fn validate(&self) -> Result<(), CalibError> {
        let [d0, d1, d2] = self.offsets;
        if d0 != 0.0 || !(d1 > d0 && d2 > d1) {
            return Err(CalibError::InvalidWand("offsets must be 0 < d1 < d2".into()));
        }
        if (d1 - d2 / 2.0).abs() < 1e-3 * d2 {
            return Err(CalibError::InvalidWand("middle marker must not be centered".into()));
        }
        let mut f = self.frequencies;
        if f.iter().any(|&x| !(x > 0.0)) {
            return Err(CalibError::InvalidWand("frequencies must be positive".into()));
        }
        f.sort_by(f64::total_cmp);
        if f[1] < 1.2 * f[0] || f[2] < 1.2 * f[1] {
            return Err(CalibError::InvalidWand("frequencies must be at least 20% apart".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.offsets[2]
    }

    pub fn from_json(s: &str) -> Result<Self, CalibError> {
        let w: WandGeometry = serde_json::from_str(s).map_err(|e| CalibError::InvalidWand(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("wand serializes")
    }
}

/// Wand placement: marker `i` sits at `point + offsets[i] * direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WandPose {
    pub point: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl WandPose {
    pub fn new(point: Vector3<f64>, direction: Vector3<f64>) -> Self {
        WandPose { point, direction: direction.normalize() }
    }

    pub fn markers(&self, wand: &WandGeometry) -> [Vector3<f64>; 3] {
        wand.offsets.map(|d| self.point + d * self.direction)
    }

    pub fn marker(&self, wand: &WandGeometry, i: usize) -> Vector3<f64> {
        self.point + wand.offsets[i] * self.direction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub camera: usize,
    /// Sample time, s.
    pub t: f64,
    pub pixel: Vector2<f64>,
    pub marker: usize,
    pub confidence: f64,
}

/// Detections of one wand placement, keyed by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub rig: Rig,
    pub wand: WandGeometry,
    pub detections: Vec<MarkerDetection>,
}

impl CalibrationProblem {
    pub fn new(rig: Rig, wand: WandGeometry, detections: Vec<MarkerDetection>) -> Result<Self, CalibError> {
        let p = CalibrationProblem { rig, wand, detections };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        self.wand.validate()?;
        self.rig.validate()?;
        let mut seen = BTreeMap::new();
        for d in &self.detections {
            if d.camera >= self.rig.cameras.len() {
                return Err(CalibError::InvalidProblem(format!("camera index {} out of range", d.camera)));
            }
            if d.marker > 2 {
                return Err(CalibError::InvalidProblem(format!("marker id {}", d.marker)));
            }
            if !(d.pixel.x.is_finite() && d.pixel.y.is_finite() && d.t.is_finite()) {
                return Err(CalibError::InvalidProblem("non-finite detection".into()));
            }
            let n = seen.entry((d.camera, d.t.to_bits(), d.marker)).or_insert(0usize);
            *n += 1;
            if *n > 1 {
                return Err(CalibError::InvalidProblem(format!(
                    "camera {} has two detections of marker {} at t = {}",
                    d.camera, d.marker, d.t
                )));
            }
        }
        Ok(())
    }

    /// Distinct sample times in increasing order.
    pub fn sample_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.detections.iter().map(|d| d.t).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// `(sample index, marker) -> pixel` per camera.
    pub(crate) fn observation_table(&self) -> (Vec<f64>, Vec<BTreeMap<(usize, usize), Vector2<f64>>>) {
        let times = self.sample_times();
        let mut table = vec![BTreeMap::new(); self.rig.cameras.len()];
        for d in &self.detections {
            let s = times.partition_point(|&t| t < d.t);
            table[d.camera].insert((s, d.marker), d.pixel);
        }
        (times, table)
    }
}

pub fn write_detections_csv<W: Write>(detections: &[MarkerDetection], w: W) -> Result<(), CalibError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CalibError::Io(e.to_string());
    wr.write_record(["camera", "t", "u", "v", "marker", "confidence"]).map_err(err)?;
    for d in detections {
        wr.serialize((d.camera, d.t, d.pixel.x, d.pixel.y, d.marker, d.confidence)).map_err(err)?;
    }
    wr.flush().map_err(|e| CalibError::Io(e.to_string()))
}

pub fn read_detections_csv<R: Read>(r: R) -> Result<Vec<MarkerDetection>, CalibError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize::<(usize, f64, f64, f64, usize, f64)>() {
        let (camera, t, u, v, marker, confidence) = rec.map_err(|e| CalibError::Io(e.to_string()))?;
        out.push(MarkerDetection { camera, t, pixel: Vector2::new(u, v), marker, confidence });
    }
    Ok(out)
}

/// Per-camera reprojection table: `camera,name,mean_px,std_px,count`.
pub fn write_mae_csv<W: Write>(rig: &Rig, stats: &[Option<ErrorStats>], w: W) -> Result<(), CalibError> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| CalibError::Io(e.to_string());
    wr.write_record(["camera", "name", "mean_px", "std_px", "count"]).map_err(err)?;
    for (i, (cam, s)) in rig.cameras.iter().zip(stats).enumerate() {
        let (mean, std, count) = s.map_or((f64::NAN, f64::NAN, 0), |s| (s.mean, s.std, s.count));
        wr.serialize((i, &cam.name, mean, std, count)).map_err(err)?;
    }
    wr.flush().map_err(|e| CalibError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_wand_is_valid_and_asymmetric() {
        let w = WandGeometry::default();
        w.validate().unwrap();
        assert!((w.offsets[1] - w.offsets[2] / 2.0).abs() > 0.01);
    }

    #[test]
    fn wand_validation() {
        let bad_spacing = WandGeometry { offsets: [0.0, 0.2, 0.4], ..Default::default() };
        assert!(bad_spacing.validate().is_err());
        let close = WandGeometry { frequencies: [125.0, 140.0, 333.0], ..Default::default() };
        assert!(close.validate().is_err());
        let unordered = WandGeometry { offsets: [0.0, 0.4, 0.15], ..Default::default() };
        assert!(unordered.validate().is_err());
    }

    #[test]
    fn markers_are_collinear_at_offsets() {
        let w = WandGeometry::default();
        let p = WandPose::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 1.0, 0.0));
        let m = p.markers(&w);
        assert!(((m[1] - m[0]).norm() - 0.15).abs() < 1e-12);
        assert!(((m[2] - m[0]).norm() - 0.40).abs() < 1e-12);
        assert!((m[1] - m[0]).cross(&(m[2] - m[0])).norm() < 1e-12);
    }

    #[test]
    fn detections_csv_round_trip() {
        let d = vec![
            MarkerDetection { camera: 0, t: 0.5, pixel: Vector2::new(10.25, 20.5), marker: 2, confidence: 0.75 },
            MarkerDetection { camera: 3, t: 1.0, pixel: Vector2::new(-1.0, 7.0), marker: 0, confidence: 1.0 },
        ];
        let mut buf = Vec::new();
        write_detections_csv(&d, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("camera,t,u,v,marker,confidence\n"));
        assert_eq!(read_detections_csv(&buf[..]).unwrap(), d);
    }

    #[test]
    fn duplicate_detection_rejected() {
        let d = MarkerDetection { camera: 0, t: 0.5, pixel: Vector2::new(1.0, 2.0), marker: 1, confidence: 1.0 };
        let p = CalibrationProblem::new(Rig::table_tennis_default(), WandGeometry::default(), vec![d, d]);
        assert!(matches!(p, Err(CalibError::InvalidProblem(_))));
    }
}
