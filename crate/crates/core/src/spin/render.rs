use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{BallImage, DotPattern, SpinError};
use crate::geometry::Rotation;

pub const DEFAULT_RESOLUTION: usize = 60;

/// Dots whose rotated center has `z` at or below this are not drawn.
const VISIBLE_Z: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub resolution: usize,
    /// Ball radius as a fraction of the resolution.
    pub radius_fraction: f64,
    /// Direction toward the light in the image frame (`z` toward viewer).
    pub light: Vector3<f64>,
    pub ambient: f64,
    pub diffuse: f64,
    pub base_albedo: f64,
    pub dot_albedo: f64,
    /// Samples per pixel side near dot and limb edges.
    pub supersample: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            resolution: DEFAULT_RESOLUTION,
            radius_fraction: 0.45,
            light: Vector3::z(),
            ambient: 0.25,
            diffuse: 0.75,
            base_albedo: 1.0,
            dot_albedo: 0.25,
            supersample: 4,
        }
    }
}

/// Orthographic render of the patterned ball seen along `-z`. A body-frame
/// dot `d` appears at direction `orientation * d`.
pub fn render_ball(orientation: &Rotation, pattern: &DotPattern, settings: &RenderSettings) -> Result<BallImage, SpinError> {
    let res = settings.resolution;
    if res < 32 {
        return Err(SpinError::InvalidResolution(res));
    }
    let light = settings.light.try_normalize(1e-12).unwrap_or_else(Vector3::z);
    let radius = settings.radius_fraction * res as f64;
    let center = (res as f64 / 2.0, res as f64 / 2.0);
    let dots: Vec<Vector3<f64>> =
        pattern.dots.iter().map(|d| orientation.rotate(d)).filter(|d| d.z > VISIBLE_Z).collect();
    let dot_angle = pattern.dot_radius_deg.to_radians();
    let cos_dot = dot_angle.cos();

    let shade = |n: &Vector3<f64>| -> f64 {
        let in_dot = dots.iter().any(|d| d.dot(n) >= cos_dot);
        let albedo = if in_dot { settings.dot_albedo } else { settings.base_albedo };
        albedo * (settings.ambient + settings.diffuse * n.dot(&light).max(0.0))
    };
    let normal = |u: f64, v: f64| -> Option<Vector3<f64>> {
        let x = (u - center.0) / radius;
        let y = -(v - center.1) / radius;
        let rho2 = x * x + y * y;
        (rho2 <= 1.0).then(|| Vector3::new(x, y, (1.0 - rho2).sqrt()))
    };

    let ss = settings.supersample.max(1);
    let mut pixels = vec![0f32; res * res];
    for j in 0..res {
        for i in 0..res {
            let (u, v) = (i as f64 + 0.5, j as f64 + 0.5);
            let rho = ((u - center.0).powi(2) + (v - center.1).powi(2)).sqrt() / radius;
            if rho > 1.0 + 1.0 / radius {
                continue;
            }
            let near_limb = rho > 1.0 - 1.5 / radius;
            let near_dot = normal(u, v).is_some_and(|n| {
                let margin = 1.5 / (radius * n.z.max(0.1));
                let cos_lo = (dot_angle + margin).min(std::f64::consts::PI).cos();
                let cos_hi = (dot_angle - margin).max(0.0).cos();
                dots.iter().any(|d| {
                    let c = d.dot(&n);
                    c >= cos_lo && c <= cos_hi
                })
            });
            let value = if near_limb || near_dot {
                let mut acc = 0.0;
                for sj in 0..ss {
                    for si in 0..ss {
                        let su = i as f64 + (si as f64 + 0.5) / ss as f64;
                        let sv = j as f64 + (sj as f64 + 0.5) / ss as f64;
                        if let Some(n) = normal(su, sv) {
                            acc += shade(&n);
                        }
                    }
                }
                acc / (ss * ss) as f64
            } else {
                normal(u, v).map_or(0.0, |n| shade(&n))
            };
            pixels[j * res + i] = value as f32;
        }
    }
    Ok(BallImage { width: res, height: res, pixels, center, radius, t: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn front_pattern() -> DotPattern {
        let dots = [(0.0, 0.0), (0.4, 0.1), (-0.35, 0.3), (0.1, -0.5), (-0.3, -0.4), (0.55, -0.3), (-0.6, -0.05), (0.2, 0.6)]
            .iter()
            .map(|&(x, y): &(f64, f64)| Vector3::new(x, y, (1.0 - x * x - y * y).sqrt()))
            .collect();
        DotPattern { dot_radius_deg: 6.0, dots }
    }

    #[test]
    fn identity_places_dots_at_scaled_xy() {
        let p = front_pattern();
        let s = RenderSettings::default();
        let img = render_ball(&Rotation::identity(), &p, &s).unwrap();
        let r = 0.45 * 60.0;
        let plain = render_ball(&Rotation::identity(), &DotPattern { dots: vec![], ..p.clone() }, &s).unwrap();
        for d in &p.dots {
            let (u, v) = (30.0 + d.x * r, 30.0 - d.y * r);
            let (i, j) = (u.floor() as usize, v.floor() as usize);
            assert!(img.get(i, j) < 0.5 * plain.get(i, j), "dot at ({u}, {v}) not darker");
        }
    }

    #[test]
    fn half_turn_about_z_is_in_plane_half_turn() {
        let p = DotPattern::default_pattern();
        let s = RenderSettings::default();
        let a = render_ball(&Rotation::identity(), &p, &s).unwrap();
        let b = render_ball(&Rotation::from_axis_angle(&Vector3::z(), std::f64::consts::PI), &p, &s).unwrap();
        for j in 0..60 {
            for i in 0..60 {
                assert!((a.get(i, j) - b.get(59 - i, 59 - j)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn empty_pattern_is_plain_shaded_sphere() {
        let p = DotPattern { dot_radius_deg: 6.0, dots: vec![] };
        let s = RenderSettings::default();
        let img = render_ball(&Rotation::identity(), &p, &s).unwrap();
        // Interior pixel: shading with the normal at its center.
        let n = img.pixel_to_sphere(40.5, 20.5).unwrap();
        let expected = s.ambient + s.diffuse * n.z;
        assert!((img.get(40, 20) as f64 - expected).abs() < 1e-6);
        assert_eq!(img.get(0, 0), 0.0);
        // Brightness never increases away from the center under a frontal light.
        for i in 30..59 {
            assert!(img.get(i + 1, 30) <= img.get(i, 30) + 1e-6);
        }
    }

    #[test]
    fn low_resolution_rejected() {
        let p = DotPattern::default_pattern();
        let s = RenderSettings { resolution: 16, ..Default::default() };
        assert_eq!(render_ball(&Rotation::identity(), &p, &s), Err(SpinError::InvalidResolution(16)));
    }
}
