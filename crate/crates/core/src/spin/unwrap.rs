use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    detect_dots, register_orientation, BallImage, DotPattern, OrientationSample, OrientationTrack, SpinError,
    SpinEstimate,
};
use crate::geometry::Rotation;
use crate::physics::fit_spin_damping;

/// Reliability band on the mean per-step rotation angle, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnwrapSettings {
    pub min_mean_angle: f64,
    pub max_mean_angle: f64,
}

impl Default for UnwrapSettings {
    fn default() -> Self {
        UnwrapSettings { min_mean_angle: 0.02 * PI, max_mean_angle: 0.85 * PI }
    }
}

pub fn unwrap_spin(track: &OrientationTrack) -> Result<SpinEstimate, SpinError> {
    unwrap_spin_with(track, &UnwrapSettings::default())
}

struct Step {
    t_mid: f64,
    dt: f64,
    axis: Option<Vector3<f64>>,
    angle: f64,
}

/// Turns an orientation track into a spin estimate. Each relative rotation
/// `R_{i+1} R_i^-1` has angle `θ ∈ [0, π]`, equivalent to `2π - θ` about
/// the flipped axis. The interpretation is chosen per step to agree with
/// the dominant axis of the whole track, and the overall sense is the one
/// with the smaller mean angle.
pub fn unwrap_spin_with(track: &OrientationTrack, settings: &UnwrapSettings) -> Result<SpinEstimate, SpinError> {
    let n = track.samples.len();
    if n < 3 {
        return Err(SpinError::TooFewSamples(n));
    }
    track.validate()?;
    let t0 = track.samples[0].t;
    let steps: Vec<Step> = track
        .samples
        .windows(2)
        .map(|w| {
            let (axis, angle) = (w[1].rotation * w[0].rotation.inverse()).axis_angle();
            Step { t_mid: 0.5 * (w[0].t + w[1].t) - t0, dt: w[1].t - w[0].t, axis, angle }
        })
        .collect();

    // Dominant axis: principal eigenvector of the sin(θ/2)-weighted scatter.
    let mut scatter = Matrix3::<f64>::zeros();
    for s in &steps {
        if let Some(a) = s.axis {
            scatter += (s.angle / 2.0).sin() * a * a.transpose();
        }
    }
    let e = if scatter.norm() > 0.0 {
        let eig = SymmetricEigen::new(scatter);
        let i = eig.eigenvalues.imax();
        eig.eigenvectors.column(i).into_owned()
    } else {
        Vector3::z()
    };

    // Steps below the noise floor keep their small angle whatever their axis.
    let unwrap_with = |dir: Vector3<f64>| -> Vec<(f64, Option<Vector3<f64>>)> {
        steps
            .iter()
            .map(|s| match s.axis {
                Some(a) if s.angle > settings.min_mean_angle => {
                    if a.dot(&dir) >= 0.0 {
                        (s.angle, Some(a))
                    } else {
                        (TAU - s.angle, Some(-a))
                    }
                }
                Some(a) => (s.angle, Some(a)),
                None => (s.angle, None),
            })
            .collect()
    };
    let plus = unwrap_with(e);
    let minus = unwrap_with(-e);
    let mean = |v: &[(f64, Option<Vector3<f64>>)]| v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64;
    let (chosen, dir) = if mean(&plus) <= mean(&minus) { (plus, e) } else { (minus, -e) };
    let mean_angle = mean(&chosen);

    let axis_sum: Vector3<f64> = chosen
        .iter()
        .filter(|(angle, _)| *angle > settings.min_mean_angle)
        .filter_map(|(_, a)| *a)
        .sum();
    let axis = axis_sum.try_normalize(1e-12).unwrap_or(dir);

    let rates: Vec<(f64, f64)> =
        steps.iter().zip(&chosen).map(|(s, (angle, _))| (s.t_mid, angle / (TAU * s.dt))).collect();
    let mean_rate = rates.iter().map(|r| r.1).sum::<f64>() / rates.len() as f64;

    let in_band = mean_angle >= settings.min_mean_angle && mean_angle <= settings.max_mean_angle;
    let positive: Vec<(f64, f64)> = rates.iter().copied().filter(|r| r.1 > 0.0).collect();
    let fit = if mean_angle >= settings.min_mean_angle { fit_spin_damping(&positive).ok() } else { None };
    let (rate0, k) = match fit {
        Some(f) if f.k.is_finite() && f.rate0.is_finite() => (f.rate0, f.k),
        _ => (mean_rate, 0.0),
    };

    let sq: f64 = steps
        .iter()
        .zip(&chosen)
        .map(|(s, (angle, _))| {
            let model = TAU * rate0 * (-k * s.t_mid).exp() * s.dt;
            (angle - model).powi(2)
        })
        .sum();
    let residual_deg = (sq / steps.len() as f64).sqrt().to_degrees();

    Ok(SpinEstimate { axis, rate0: rate0.max(0.0), k, residual_deg, reliable: in_band && fit.is_some() })
}

/// Detects and registers every image, hinting each registration with a
/// constant-velocity prediction. Frames that fail to register are skipped.
pub fn track_from_images(images: &[BallImage], pattern: &DotPattern) -> OrientationTrack {
    let detections: Vec<Vec<Vector3<f64>>> = images.par_iter().map(detect_dots).collect();
    let mut samples: Vec<OrientationSample> = Vec::new();
    for (img, obs) in images.iter().zip(&detections) {
        let hint = match samples.as_slice() {
            [.., a, b] => Some((b.rotation * a.rotation.inverse()) * b.rotation),
            [.., b] => Some(b.rotation),
            [] => None,
        };
        if let Ok(reg) = register_orientation(obs, pattern, hint) {
            if samples.last().map_or(true, |s| img.t > s.t) {
                samples.push(OrientationSample { t: img.t, rotation: reg.rotation, inliers: reg.inliers });
            }
        }
    }
    OrientationTrack { samples }
}

pub fn estimate_spin_from_images(images: &[BallImage], pattern: &DotPattern) -> Result<SpinEstimate, SpinError> {
    if images.len() < 3 {
        return Err(SpinError::TooFewSamples(images.len()));
    }
    let track = track_from_images(images, pattern);
    if track.len() < 3 {
        return Err(SpinError::TooFewSamples(track.len()));
    }
    unwrap_spin(&track)
}

/// Orientation at `t` of a ball spinning about the fixed `axis` with
/// `rate(t) = rate0 * exp(-k t)` rps, starting from `initial`.
pub fn spinning_orientation(initial: &Rotation, axis: &Vector3<f64>, rate0: f64, k: f64, t: f64) -> Rotation {
    let turns = if k.abs() < 1e-12 { rate0 * t } else { rate0 * (1.0 - (-k * t).exp()) / k };
    Rotation::from_axis_angle(axis, TAU * turns) * *initial
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{render_ball, RenderSettings};

    fn constant_track(rev_per_frame: f64, axis: Vector3<f64>, fps: f64, frames: usize, t0: f64) -> OrientationTrack {
        let samples = (0..frames)
            .map(|i| OrientationSample {
                t: t0 + i as f64 / fps,
                rotation: Rotation::from_axis_angle(&axis, TAU * rev_per_frame * i as f64),
                inliers: 8,
            })
            .collect();
        OrientationTrack::new(samples).unwrap()
    }

    #[test]
    fn tenth_rev_per_frame() {
        let est = unwrap_spin(&constant_track(0.1, Vector3::z(), 350.0, 20, 0.0)).unwrap();
        assert!((est.rate0 - 35.0).abs() < 1e-6, "{}", est.rate0);
        assert!((est.axis - Vector3::z()).norm() < 1e-9);
        assert!(est.k.abs() < 1e-9);
        assert!(est.reliable);
        assert!(est.residual_deg < 1e-6);
    }

    #[test]
    fn half_rev_per_frame_is_unreliable() {
        let est = unwrap_spin(&constant_track(0.5, Vector3::z(), 350.0, 20, 0.0)).unwrap();
        assert!((est.rate0 - 175.0).abs() < 1e-6);
        assert!(!est.reliable);
    }

    #[test]
    fn identity_track_is_below_noise_floor() {
        let est = unwrap_spin(&constant_track(0.0, Vector3::z(), 350.0, 10, 0.0)).unwrap();
        assert_eq!(est.rate0, 0.0);
        assert!(!est.reliable);
    }

    #[test]
    fn too_few_samples() {
        let track = constant_track(0.1, Vector3::z(), 350.0, 2, 0.0);
        assert_eq!(unwrap_spin(&track), Err(SpinError::TooFewSamples(2)));
    }

    #[test]
    fn decaying_spin_recovers_axis_and_k() {
        let axis = Vector3::new(0.3, -0.8, 0.5).normalize();
        let initial = Rotation::from_rotation_vector(&Vector3::new(0.2, 0.4, -1.0));
        let (rate0, k, fps) = (80.0, 0.5, 350.0);
        let samples = (0..350)
            .map(|i| {
                let t = i as f64 / fps;
                OrientationSample { t, rotation: spinning_orientation(&initial, &axis, rate0, k, t), inliers: 8 }
            })
            .collect();
        let est = unwrap_spin(&OrientationTrack::new(samples).unwrap()).unwrap();
        assert!(est.axis.dot(&axis).clamp(-1.0, 1.0).acos().to_degrees() < 1.0);
        assert!((est.k - k).abs() / k < 0.05, "k = {}", est.k);
        // Oracle: mean rate over a step equals turns per step times fps.
        assert!((est.rate0 - rate0).abs() / rate0 < 0.01);
    }

    #[test]
    fn aliased_rate_above_nyquist_folds_back() {
        // 180 rps at 350 fps turns 1.029π per frame; the shortest equivalent
        // is 0.971π about the opposite axis, i.e. 170 rps.
        let est = unwrap_spin(&constant_track(180.0 / 350.0, Vector3::x(), 350.0, 20, 0.0)).unwrap();
        assert!((est.rate0 - 170.0).abs() < 1e-6);
        assert!(est.axis.dot(&Vector3::x()) < -0.999);
        assert!(!est.reliable);
    }

    #[test]
    fn time_shift_invariant() {
        let a = unwrap_spin(&constant_track(0.13, Vector3::y(), 350.0, 15, 0.0)).unwrap();
        let b = unwrap_spin(&constant_track(0.13, Vector3::y(), 350.0, 15, 12.5)).unwrap();
        assert!((a.rate0 - b.rate0).abs() < 1e-6);
        assert!((a.axis - b.axis).norm() < 1e-9);
        assert_eq!(a.reliable, b.reliable);
    }

    fn render_sequence(rate: f64, axis: Vector3<f64>, frames: usize) -> Vec<BallImage> {
        let p = DotPattern::default_pattern();
        let initial = Rotation::from_rotation_vector(&Vector3::new(0.3, 0.2, 0.1));
        (0..frames)
            .map(|i| {
                let t = i as f64 / 350.0;
                let mut img =
                    render_ball(&spinning_orientation(&initial, &axis, rate, 0.0, t), &p, &RenderSettings::default())
                        .unwrap();
                img.t = t;
                img
            })
            .collect()
    }

    #[test]
    fn images_fifty_rps() {
        let axis = Vector3::new(1.0, 1.0, 1.0).normalize();
        let images = render_sequence(50.0, axis, 10);
        let est = estimate_spin_from_images(&images, &DotPattern::default_pattern()).unwrap();
        assert!((est.rate0 - 50.0).abs() / 50.0 < 0.02, "rate {}", est.rate0);
        assert!(est.axis.dot(&axis).acos().to_degrees() < 5.0);
        assert!(est.reliable);
    }

    #[test]
    fn blank_frames_too_few_samples() {
        let p = DotPattern { dot_radius_deg: 6.0, dots: vec![] };
        let images: Vec<_> = (0..5)
            .map(|_| render_ball(&Rotation::identity(), &p, &RenderSettings::default()).unwrap())
            .collect();
        assert!(matches!(
            estimate_spin_from_images(&images, &DotPattern::default_pattern()),
            Err(SpinError::TooFewSamples(0))
        ));
    }

    #[test]
    fn images_two_hundred_rps_unreliable() {
        let images = render_sequence(200.0, Vector3::new(0.2, 1.0, 0.3).normalize(), 12);
        let est = estimate_spin_from_images(&images, &DotPattern::default_pattern()).unwrap();
        assert!(!est.reliable);
    }
}
