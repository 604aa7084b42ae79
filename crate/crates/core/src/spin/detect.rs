use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::BallImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectSettings {
    /// Side of the local-mean window, pixels (odd).
    pub window: usize,
    /// A pixel is dark when below `ratio` times its local mean.
    pub ratio: f64,
    /// Only pixels within this fraction of the ball radius are considered.
    pub mask_fraction: f64,
    pub min_area: usize,
    /// Directions closer to the limb than this `z` are discarded.
    pub min_z: f64,
}

impl Default for DetectSettings {
    fn default() -> Self {
        DetectSettings { window: 11, ratio: 0.65, mask_fraction: 0.96, min_area: 2, min_z: 0.2 }
    }
}

/// Detects dark dots on the ball and returns their directions on the
/// camera-facing hemisphere (`x` right, `y` up, `z` toward the viewer).
pub fn detect_dots(image: &BallImage) -> Vec<Vector3<f64>> {
    detect_dots_with(image, &DetectSettings::default())
}

pub fn detect_dots_with(image: &BallImage, s: &DetectSettings) -> Vec<Vector3<f64>> {
    let (w, h) = (image.width, image.height);
    let mask_r = s.mask_fraction * image.radius;
    let mask: Vec<bool> = (0..w * h)
        .map(|k| {
            let (u, v) = ((k % w) as f64 + 0.5, (k / w) as f64 + 0.5);
            (u - image.center.0).powi(2) + (v - image.center.1).powi(2) <= mask_r * mask_r
        })
        .collect();

    // Integral images of masked intensity and mask count.
    let stride = w + 1;
    let mut sum = vec![0f64; stride * (h + 1)];
    let mut cnt = vec![0u32; stride * (h + 1)];
    for v in 0..h {
        for u in 0..w {
            let k = v * w + u;
            let (val, c) = if mask[k] { (image.pixels[k] as f64, 1) } else { (0.0, 0) };
            let o = (v + 1) * stride + u + 1;
            sum[o] = val + sum[o - 1] + sum[o - stride] - sum[o - stride - 1];
            cnt[o] = c + cnt[o - 1] + cnt[o - stride] - cnt[o - stride - 1];
        }
    }
    let half = s.window / 2;
    let local_mean: Vec<f64> = (0..w * h)
        .map(|k| {
            let (u, v) = (k % w, k / w);
            let (u0, v0) = (u.saturating_sub(half), v.saturating_sub(half));
            let (u1, v1) = ((u + half + 1).min(w), (v + half + 1).min(h));
            let a = |x: usize, y: usize| (sum[y * stride + x], cnt[y * stride + x]);
            let (s11, c11) = a(u1, v1);
            let (s01, c01) = a(u0, v1);
            let (s10, c10) = a(u1, v0);
            let (s00, c00) = a(u0, v0);
            let n = c11 + c00 - c01 - c10;
            if n == 0 {
                0.0
            } else {
                (s11 + s00 - s01 - s10) / n as f64
            }
        })
        .collect();
    let dark: Vec<bool> =
        (0..w * h).map(|k| mask[k] && (image.pixels[k] as f64) < s.ratio * local_mean[k]).collect();

    let mut label = vec![usize::MAX; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !dark[start] || label[start] != usize::MAX {
            continue;
        }
        let id = start;
        let mut component = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(k) = stack.pop() {
            component.push(k);
            for n in neighbours(k, w, h) {
                if dark[n] && label[n] == usize::MAX {
                    label[n] = id;
                    stack.push(n);
                }
            }
        }
        if component.len() < s.min_area {
            continue;
        }
        // Darkness-weighted centroid over the component and its one-pixel
        // border, which holds the partially covered edge pixels.
        let mut region = component.clone();
        for &k in &component {
            for n in neighbours(k, w, h) {
                if mask[n] && !dark[n] && !region.contains(&n) {
                    region.push(n);
                }
            }
        }
        let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
        for &k in &region {
            let wt = (local_mean[k] - image.pixels[k] as f64).max(0.0);
            su += wt * ((k % w) as f64 + 0.5);
            sv += wt * ((k / w) as f64 + 0.5);
            sw += wt;
        }
        if sw <= 0.0 {
            continue;
        }
        if let Some(d) = image.pixel_to_sphere(su / sw, sv / sw) {
            if d.z >= s.min_z {
                out.push(d);
            }
        }
    }
    out
}

fn neighbours(k: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (u, v) = ((k % w) as isize, (k / w) as isize);
    (-1isize..=1).flat_map(move |dv| (-1isize..=1).map(move |du| (u + du, v + dv))).filter_map(move |(x, y)| {
        (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && !(x == u && y == v))
            .then(|| y as usize * w + x as usize)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use crate::spin::{render_ball, DotPattern, RenderSettings};

    fn eight_dot_pattern() -> DotPattern {
        let dots = [(0.0, 0.0), (0.4, 0.1), (-0.35, 0.3), (0.1, -0.5), (-0.3, -0.4), (0.55, -0.3), (-0.6, -0.05), (0.2, 0.6)]
            .iter()
            .map(|&(x, y): &(f64, f64)| Vector3::new(x, y, (1.0 - x * x - y * y).sqrt()))
            .collect();
        DotPattern { dot_radius_deg: 6.0, dots }
    }

    fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.dot(b).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn eight_dots_within_two_degrees() {
        let p = eight_dot_pattern();
        let img = render_ball(&Rotation::identity(), &p, &RenderSettings::default()).unwrap();
        let found = detect_dots(&img);
        assert_eq!(found.len(), 8);
        for truth in &p.dots {
            let best = found.iter().map(|f| angle_deg(f, truth)).fold(f64::INFINITY, f64::min);
            assert!(best < 2.0, "dot {truth:?}: nearest detection {best:.2} deg away");
        }
    }

    #[test]
    fn blank_sphere_has_no_dots() {
        let p = DotPattern { dot_radius_deg: 6.0, dots: vec![] };
        let img = render_ball(&Rotation::identity(), &p, &RenderSettings::default()).unwrap();
        assert!(detect_dots(&img).is_empty());
        let side = RenderSettings { light: Vector3::new(1.0, 0.5, 0.6), ..Default::default() };
        let img = render_ball(&Rotation::identity(), &p, &side).unwrap();
        assert!(detect_dots(&img).is_empty());
    }

    #[test]
    fn touching_dots_merge_into_one() {
        // Two dots 1.5 radii apart overlap in the image: one component.
        let a = Vector3::new(0.0, 0.0, 1.0);
        let b = Rotation::from_axis_angle(&Vector3::y(), 9f64.to_radians()).rotate(&a);
        let p = DotPattern { dot_radius_deg: 6.0, dots: vec![a, b] };
        let img = render_ball(&Rotation::identity(), &p, &RenderSettings::default()).unwrap();
        assert!(detect_dots(&img).len() <= 1);
    }

    #[test]
    fn default_pattern_detections_match_visible_dots() {
        let p = DotPattern::default_pattern();
        let r = Rotation::from_rotation_vector(&Vector3::new(0.7, -0.4, 1.9));
        let img = render_ball(&r, &p, &RenderSettings::default()).unwrap();
        let found = detect_dots(&img);
        let truth: Vec<_> = p.dots.iter().map(|d| r.rotate(d)).filter(|d| d.z > 0.3).collect();
        assert!(found.len() >= truth.len());
        for t in &truth {
            let best = found.iter().map(|f| angle_deg(f, t)).fold(f64::INFINITY, f64::min);
            assert!(best < 2.0);
        }
    }
}
