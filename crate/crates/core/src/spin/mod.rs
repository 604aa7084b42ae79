//! Dot-pattern spin estimation: render patterned ball images, detect dots,
//! register per-frame orientations and unwrap them into axis, rate and
//! damping.

pub mod benchmark;
mod detect;
mod pattern;
mod register;
mod render;
mod unwrap;

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rotation;

pub use detect::{detect_dots, detect_dots_with, DetectSettings};
pub use pattern::{DotPattern, DEFAULT_DOT_COUNT, DEFAULT_DOT_RADIUS_DEG, DEFAULT_PATTERN_SEED};
pub use register::{register_orientation, wahba, Registration, MATCH_TOLERANCE_DEG, MIN_INLIERS};
pub use render::{render_ball, RenderSettings, DEFAULT_RESOLUTION};
pub use unwrap::{
    estimate_spin_from_images, spinning_orientation, track_from_images, unwrap_spin, unwrap_spin_with, UnwrapSettings,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpinError {
    #[error("invalid dot pattern: {0}")]
    InvalidPattern(String),
    #[error("too few dots: {0}")]
    TooFewDots(usize),
    #[error("no consensus: best inlier set has {0} dots")]
    NoConsensus(usize),
    #[error("too few orientation samples: {0}")]
    TooFewSamples(usize),
    #[error("invalid image resolution {0}, need at least 32")]
    InvalidResolution(usize),
    #[error("invalid track: {0}")]
    InvalidTrack(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Square grayscale ball crop with known center and radius in pixels.
/// Intensities are row-major, `pixels[v * width + u]`, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
    pub center: (f64, f64),
    pub radius: f64,
    pub t: f64,
}

impl BallImage {
    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.pixels[v * self.width + u]
    }

    /// Image coordinates to the ball's camera-facing unit frame: `x` right,
    /// `y` up, `z` toward the viewer.
    pub fn pixel_to_sphere(&self, u: f64, v: f64) -> Option<Vector3<f64>> {
        let x = (u - self.center.0) / self.radius;
        let y = -(v - self.center.1) / self.radius;
        let rho2 = x * x + y * y;
        if rho2 > 1.0 {
            return None;
        }
        Some(Vector3::new(x, y, (1.0 - rho2).sqrt()))
    }

    pub fn sphere_to_pixel(&self, d: &Vector3<f64>) -> (f64, f64) {
        (self.center.0 + d.x * self.radius, self.center.1 - d.y * self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationSample {
    pub t: f64,
    pub rotation: Rotation,
    pub inliers: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OrientationTrack {
    pub samples: Vec<OrientationSample>,
}

impl OrientationTrack {
    pub fn new(samples: Vec<OrientationSample>) -> Result<Self, SpinError> {
        let track = OrientationTrack { samples };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        for w in self.samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(SpinError::InvalidTrack(format!("timestamps not increasing at t = {}", w[1].t)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes `t,qw,qx,qy,qz,inliers`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SpinError> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| SpinError::Io(e.to_string());
        wr.write_record(["t", "qw", "qx", "qy", "qz", "inliers"]).map_err(io)?;
        for s in &self.samples {
            let [qw, qx, qy, qz] = s.rotation.wxyz();
            wr.serialize((s.t, qw, qx, qy, qz, s.inliers)).map_err(io)?;
        }
        wr.flush().map_err(|e| SpinError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SpinError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut samples = Vec::new();
        for rec in rd.deserialize::<(f64, f64, f64, f64, f64, usize)>() {
            let (t, qw, qx, qy, qz, inliers) = rec.map_err(|e| SpinError::Io(e.to_string()))?;
            let rotation =
                Rotation::from_wxyz(qw, qx, qy, qz).map_err(|e| SpinError::InvalidTrack(e.to_string()))?;
            samples.push(OrientationSample { t, rotation, inliers });
        }
        OrientationTrack::new(samples)
    }
}

/// Fitted spin: `rate(t) = rate0 * exp(-k (t - t_first))` about `axis`
/// (ball orientation frame, right-hand rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinEstimate {
    pub axis: Vector3<f64>,
    /// Revolutions per second at the first sample.
    pub rate0: f64,
    /// Damping rate, 1/s.
    pub k: f64,
    /// RMS per-step rotation-angle residual against the fitted model, degrees.
    pub residual_deg: f64,
    pub reliable: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_csv_round_trip() {
        let samples = (0..5)
            .map(|i| OrientationSample {
                t: i as f64 / 350.0,
                rotation: Rotation::from_axis_angle(&Vector3::z(), 0.3 * i as f64),
                inliers: 6 + i,
            })
            .collect();
        let track = OrientationTrack::new(samples).unwrap();
        let mut buf = Vec::new();
        track.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,qw,qx,qy,qz,inliers\n"));
        let back = OrientationTrack::read_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in track.samples.iter().zip(&back.samples) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.inliers, b.inliers);
            assert!(a.rotation.angle_to(&b.rotation) < 1e-12);
        }
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let s = OrientationSample { t: 0.0, rotation: Rotation::identity(), inliers: 5 };
        assert!(OrientationTrack::new(vec![s, s]).is_err());
    }

    #[test]
    fn pixel_sphere_round_trip() {
        let img = BallImage { width: 60, height: 60, pixels: vec![0.0; 3600], center: (30.0, 30.0), radius: 27.0, t: 0.0 };
        let d = Vector3::new(0.3, -0.4, (1.0f64 - 0.25).sqrt());
        let (u, v) = img.sphere_to_pixel(&d);
        assert!((img.pixel_to_sphere(u, v).unwrap() - d).norm() < 1e-12);
        assert!(img.pixel_to_sphere(0.0, 0.0).is_none());
    }
}
