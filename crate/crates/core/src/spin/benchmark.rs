//! Synthetic end-to-end runs: render a spinning ball, estimate its spin and
//! compare with the truth.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_spin_from_images, render_ball, spinning_orientation, DotPattern, RenderSettings, SpinEstimate, SpinError};
use crate::geometry::Rotation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinRunConfig {
    pub fps: f64,
    pub frames: usize,
    pub resolution: usize,
    pub k: f64,
    /// RMS angle of the random rotation applied to each rendered frame, degrees.
    pub orientation_noise_deg: f64,
}

impl Default for SpinRunConfig {
    fn default() -> Self {
        SpinRunConfig { fps: 350.0, frames: 48, resolution: 60, k: 0.0, orientation_noise_deg: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinRun {
    pub true_rate: f64,
    pub true_axis: Vector3<f64>,
    pub estimate: Option<SpinEstimate>,
}

impl SpinRun {
    pub fn rate_error(&self) -> Option<f64> {
        self.estimate.map(|e| (e.rate0 - self.true_rate).abs() / self.true_rate)
    }

    pub fn axis_error_deg(&self) -> Option<f64> {
        self.estimate.map(|e| e.axis.dot(&self.true_axis).clamp(-1.0, 1.0).acos().to_degrees())
    }

    pub fn reliable(&self) -> bool {
        self.estimate.is_some_and(|e| e.reliable)
    }
}

/// Renders `config.frames` images of a ball spinning at `rate` rps about
/// `axis` and estimates the spin from them.
pub fn run_once(
    pattern: &DotPattern,
    config: &SpinRunConfig,
    rate: f64,
    axis: &Vector3<f64>,
    seed: u64,
) -> Result<SpinEstimate, SpinError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = random_rotation(&mut rng);
    let settings = RenderSettings { resolution: config.resolution, ..Default::default() };
    // Per-component std so that the RMS rotation angle equals the target.
    let sigma = config.orientation_noise_deg.to_radians() / 3f64.sqrt();
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| SpinError::InvalidTrack(e.to_string()))?;
    let perturb: Vec<Rotation> = (0..config.frames)
        .map(|_| {
            if sigma > 0.0 {
                Rotation::from_rotation_vector(&Vector3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                ))
            } else {
                Rotation::identity()
            }
        })
        .collect();
    let images = (0..config.frames)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / config.fps;
            let r = perturb[i] * spinning_orientation(&initial, axis, rate, config.k, t);
            render_ball(&r, pattern, &settings).map(|mut img| {
                img.t = t;
                img
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    estimate_spin_from_images(&images, pattern)
}

pub fn random_axis<R: Rng>(rng: &mut R) -> Vector3<f64> {
    let v: [f64; 3] = UnitSphere.sample(rng);
    Vector3::from(v)
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let axis = random_axis(rng);
    Rotation::from_axis_angle(&axis, rng.gen_range(0.0..std::f64::consts::PI))
}

/// Every rate in `rates` against `axes` random axes drawn from `seed`.
pub fn sweep(pattern: &DotPattern, config: &SpinRunConfig, rates: &[f64], axes: usize, seed: u64) -> Vec<SpinRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis_list: Vec<Vector3<f64>> = (0..axes).map(|_| random_axis(&mut rng)).collect();
    let mut jobs = Vec::new();
    for (ri, &rate) in rates.iter().enumerate() {
        for (ai, axis) in axis_list.iter().enumerate() {
            jobs.push((rate, *axis, seed ^ ((ri as u64) << 32 | ai as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        }
    }
    jobs.into_iter()
        .map(|(rate, axis, s)| SpinRun {
            true_rate: rate,
            true_axis: axis,
            estimate: run_once(pattern, config, rate, &axis, s).ok(),
        })
        .collect()
}
