//! Orientation registration: find `R` with `R * pattern[i] ≈ observed[j]`
//! for the visible dots, via pairwise-angle triplet matching, consensus
//! scoring and a Wahba least-squares refinement on the inliers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{DotPattern, SpinError};
use crate::geometry::Rotation;

/// Angular tolerance for pairwise-angle matching and inlier gating.
pub const MATCH_TOLERANCE_DEG: f64 = 3.0;
/// Minimum consensus set size.
pub const MIN_INLIERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub rotation: Rotation,
    pub inliers: usize,
    /// RMS angular residual of the inliers, degrees.
    pub rms_deg: f64,
}

/// Least-squares rotation `R` minimizing `Σ |R a_i - b_i|²` for unit
/// vector pairs `(a_i, b_i)`.
pub fn wahba(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Rotation {
    let mut b = Matrix3::<f64>::zeros();
    for (a, o) in pairs {
        b += o * a.transpose();
    }
    Rotation::from_matrix(&b)
}


fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Ordered index triples `(a, b, c)` of `dots` whose pairwise angles match
/// those of `target` within `tol` radians.
pub(crate) fn candidate_triplets(dots: &[Vector3<f64>], target: &[Vector3<f64>; 3], tol: f64) -> Vec<[usize; 3]> {
    let t01 = angle(&target[0], &target[1]);
    let t02 = angle(&target[0], &target[2]);
    let t12 = angle(&target[1], &target[2]);
    let n = dots.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a == b || (angle(&dots[a], &dots[b]) - t01).abs() > tol {
                continue;
            }
            for c in 0..n {
                if c == a || c == b {
                    continue;
                }
                if (angle(&dots[a], &dots[c]) - t02).abs() <= tol && (angle(&dots[b], &dots[c]) - t12).abs() <= tol {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

struct Scored {
    rotation: Rotation,
    pairs: Vec<(usize, usize)>,
    sq_err: f64,
}

/// Greedy nearest-neighbour correspondence within `cos_tol`; each pattern
/// dot is used at most once.
fn score(rotation: Rotation, observed: &[Vector3<f64>], pattern: &[Vector3<f64>], cos_tol: f64) -> Scored {
    let rotated: Vec<Vector3<f64>> = pattern.iter().map(|p| rotation.rotate(p)).collect();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (j, o) in observed.iter().enumerate() {
        for (i, p) in rotated.iter().enumerate() {
            let c = o.dot(p);
            if c >= cos_tol {
                candidates.push((c, j, i));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_obs = vec![false; observed.len()];
    let mut used_pat = vec![false; pattern.len()];
    let mut pairs = Vec::new();
    let mut sq_err = 0.0;
    for (c, j, i) in candidates {
        if used_obs[j] || used_pat[i] {
            continue;
        }
        used_obs[j] = true;
        used_pat[i] = true;
        pairs.push((j, i));
        sq_err += c.clamp(-1.0, 1.0).acos().powi(2);
    }
    Scored { rotation, pairs, sq_err }
}

fn better(a: &Scored, b: &Scored) -> bool {
    a.pairs.len() > b.pairs.len() || (a.pairs.len() == b.pairs.len() && a.sq_err < b.sq_err)
}

fn refine(mut s: Scored, observed: &[Vector3<f64>], pattern: &[Vector3<f64>], cos_tol: f64) -> Scored {
    for _ in 0..3 {
        if s.pairs.len() < 3 {
            break;
        }
        let pairs: Vec<_> = s.pairs.iter().map(|&(j, i)| (pattern[i], observed[j])).collect();
        let next = score(wahba(&pairs), observed, pattern, cos_tol);
        if better(&next, &s) || (next.pairs == s.pairs && next.sq_err <= s.sq_err) {
            let unchanged = next.pairs == s.pairs;
            s = next;
            if unchanged {
                break;
            }
        } else {
            break;
        }
    }
    s
}

/// Registers observed camera-frame dot directions against `pattern`. A
/// `hint` is tried first and accepted when it explains most observations;
/// otherwise a full triplet search runs.
pub fn register_orientation(
    observed: &[Vector3<f64>],
    pattern: &DotPattern,
    hint: Option<Rotation>,
) -> Result<Registration, SpinError> {
    if observed.len() < 3 {
        return Err(SpinError::TooFewDots(observed.len()));
    }
    let tol = MATCH_TOLERANCE_DEG.to_radians();
    let cos_tol = tol.cos();
    let dots = &pattern.dots;
    let n_obs = observed.len();
    let good_enough = MIN_INLIERS.max((0.8 * n_obs as f64).ceil() as usize);

    if let Some(h) = hint {
        let s = refine(score(h, observed, dots, cos_tol), observed, dots, cos_tol);
        if s.pairs.len() >= good_enough {
            return Ok(finish(s));
        }
    }

    let mut best: Option<Scored> = None;
    'search: for i in 0..n_obs {
        for j in i + 1..n_obs {
            for k in j + 1..n_obs {
                let tri = [observed[i], observed[j], observed[k]];
                // Skip nearly collinear (great-circle) triples: poorly conditioned.
                if tri[0].dot(&tri[1].cross(&tri[2])).abs() < 1e-3 {
                    continue;
                }
                for [a, b, c] in candidate_triplets(dots, &tri, tol) {
                    let r = wahba(&[(dots[a], tri[0]), (dots[b], tri[1]), (dots[c], tri[2])]);
                    if [(a, 0), (b, 1), (c, 2)].iter().any(|&(p, o)| r.rotate(&dots[p]).dot(&tri[o]) < cos_tol) {
                        continue;
                    }
                    let s = score(r, observed, dots, cos_tol);
                    if best.as_ref().map_or(true, |b| better(&s, b)) {
                        best = Some(s);
                    }
                    if best.as_ref().is_some_and(|b| b.pairs.len() == n_obs && n_obs >= MIN_INLIERS + 1) {
                        break 'search;
                    }
                }
            }
        }
    }
    let best = best.map(|s| refine(s, observed, dots, cos_tol));
    match best {
        Some(s) if s.pairs.len() >= MIN_INLIERS => Ok(finish(s)),
        Some(s) => Err(SpinError::NoConsensus(s.pairs.len())),
        None => Err(SpinError::NoConsensus(0)),
    }
}

fn finish(s: Scored) -> Registration {
    let n = s.pairs.len().max(1) as f64;
    Registration { rotation: s.rotation, inliers: s.pairs.len(), rms_deg: (s.sq_err / n).sqrt().to_degrees() }
}
