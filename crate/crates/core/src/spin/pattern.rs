use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::register::{candidate_triplets, wahba};
use super::SpinError;

pub const DEFAULT_PATTERN_SEED: u64 = 2023;
pub const DEFAULT_DOT_COUNT: usize = 21;
pub const DEFAULT_DOT_RADIUS_DEG: f64 = 6.0;

const DEFAULT_PATTERN_JSON: &str = include_str!("../../data/dot_pattern_21.json");

/// Dot directions in the ball body frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DotPattern {
    pub dot_radius_deg: f64,
    pub dots: Vec<Vector3<f64>>,
}

impl DotPattern {
    /// The shipped 21-dot pattern.
    pub fn default_pattern() -> DotPattern {
        DotPattern::from_json(DEFAULT_PATTERN_JSON).expect("bundled pattern is valid")
    }

    pub fn from_json(s: &str) -> Result<DotPattern, SpinError> {
        let mut p: DotPattern = serde_json::from_str(s).map_err(|e| SpinError::InvalidPattern(e.to_string()))?;
        for d in &mut p.dots {
            let n = d.norm();
            if !(n > 0.0) {
                return Err(SpinError::InvalidPattern("zero dot direction".into()));
            }
            *d /= n;
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern serializes")
    }

    /// Seeded Fibonacci-sphere layout with angular jitter. Retries with
    /// derived seeds until the result passes [`DotPattern::validate`].
    pub fn generate(count: usize, dot_radius_deg: f64, seed: u64) -> Result<DotPattern, SpinError> {
        let golden = PI * (3.0 - 5f64.sqrt());
        let jitter = 0.15 * (4.0 * PI / count.max(1) as f64).sqrt();
        for attempt in 0..256u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
            let dots = (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    let base = Vector3::new(r * phi.cos(), r * phi.sin(), z);
                    let offset = Vector3::new(
                        rng.gen_range(-jitter..jitter),
                        rng.gen_range(-jitter..jitter),
                        rng.gen_range(-jitter..jitter),
                    );
                    (base + offset).normalize()
                })
                .collect();
            let p = DotPattern { dot_radius_deg, dots };
            // Extra spacing margin keeps neighbouring dots apart in the image.
            if p.validate().is_ok() && p.min_separation_deg() >= 4.0 * dot_radius_deg {
                return Ok(p);
            }
        }
        Err(SpinError::InvalidPattern("could not generate a valid pattern".into()))
    }

    pub fn min_separation_deg(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.dots.iter().enumerate() {
            for b in &self.dots[i + 1..] {
                best = best.min(a.dot(b).clamp(-1.0, 1.0).acos().to_degrees());
            }
        }
        best
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if self.dots.len() < 15 {
            return Err(SpinError::InvalidPattern(format!("{} dots, need at least 15", self.dots.len())));
        }
        if !(self.dot_radius_deg > 0.0) {
            return Err(SpinError::InvalidPattern("dot radius must be positive".into()));
        }
        if self.min_separation_deg() < 2.0 * self.dot_radius_deg {
            return Err(SpinError::InvalidPattern("dots overlap".into()));
        }
        if !self.is_rotation_asymmetric(1.0) {
            return Err(SpinError::InvalidPattern("pattern has a rotational symmetry".into()));
        }
        Ok(())
    }

    /// True when no rotation other than the identity maps the dot set onto
    /// itself within `tol_deg`.
    pub fn is_rotation_asymmetric(&self, tol_deg: f64) -> bool {
        if self.dots.len() < 3 {
            return false;
        }
        let tol = tol_deg.to_radians();
        // Any symmetry maps a fixed non-degenerate source triple onto some
        // pattern triple with the same pairwise angles.
        let src = self.reference_triple();
        let src_pts = [self.dots[src[0]], self.dots[src[1]], self.dots[src[2]]];
        for dst in candidate_triplets(&self.dots, &src_pts, tol) {
            let pairs: Vec<_> = (0..3).map(|k| (src_pts[k], self.dots[dst[k]])).collect();
            let r = wahba(&pairs);
            if r.angle() <= tol {
                continue;
            }
            let cos_tol = tol.cos();
            let all_match =
                self.dots.iter().all(|d| self.dots.iter().any(|e| r.rotate(d).dot(e) >= cos_tol));
            if all_match {
                return false;
            }
        }
        true
    }

    fn reference_triple(&self) -> [usize; 3] {
        // First triple whose points are well spread (not near a great circle).
        let n = self.dots.len();
        let mut best = ([0, 1, 2], 0.0);
        for i in 0..n.min(6) {
            for j in i + 1..n.min(8) {
                for k in j + 1..n.min(10) {
                    let vol = self.dots[i].dot(&self.dots[j].cross(&self.dots[k])).abs();
                    if vol > best.1 {
                        best = ([i, j, k], vol);
                    }
                }
            }
        }
        best.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    #[test]
    fn bundled_pattern_matches_generator() {
        let generated = DotPattern::generate(DEFAULT_DOT_COUNT, DEFAULT_DOT_RADIUS_DEG, DEFAULT_PATTERN_SEED).unwrap();
        let bundled = DotPattern::default_pattern();
        assert_eq!(bundled.dots.len(), 21);
        assert_eq!(bundled.dot_radius_deg, generated.dot_radius_deg);
        for (a, b) in bundled.dots.iter().zip(&generated.dots) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn bundled_pattern_satisfies_invariants() {
        let p = DotPattern::default_pattern();
        p.validate().unwrap();
        assert!(p.min_separation_deg() >= 2.0 * p.dot_radius_deg);
    }

    #[test]
    fn symmetric_pattern_detected() {
        // Octahedron vertices plus cube corners: highly symmetric.
        let mut dots = vec![
            Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y(), Vector3::z(), -Vector3::z(),
        ];
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    dots.push(Vector3::new(sx, sy, sz).normalize());
                }
            }
        }
        dots.push(Vector3::new(1.0, 1.0, 0.0).normalize());
        let p = DotPattern { dot_radius_deg: 3.0, dots: dots.clone() };
        assert!(!p.is_rotation_asymmetric(1.0));
        assert!(p.validate().is_err());

        // Rotating a valid pattern keeps it asymmetric.
        let q = DotPattern::default_pattern();
        let r = Rotation::from_rotation_vector(&Vector3::new(0.4, 1.0, -0.2));
        let rotated = DotPattern { dots: q.dots.iter().map(|d| r.rotate(d)).collect(), ..q };
        assert!(rotated.is_rotation_asymmetric(1.0));
    }

    #[test]
    fn too_few_dots_rejected() {
        let p = DotPattern::default_pattern();
        let small = DotPattern { dots: p.dots[..10].to_vec(), ..p };
        assert!(small.validate().is_err());
    }

    #[test]
    #[ignore = "writes the bundled pattern file"]
    fn regenerate_default_pattern() {
        let p = DotPattern::generate(DEFAULT_DOT_COUNT, DEFAULT_DOT_RADIUS_DEG, DEFAULT_PATTERN_SEED).unwrap();
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/dot_pattern_21.json");
        std::fs::write(path, p.to_json() + "\n").unwrap();
    }
}
