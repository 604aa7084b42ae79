use nalgebra::{DMatrix, DVector, Matrix2x3, SMatrix, SVector, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{initial_wand_poses, CalibError, CalibrationProblem, WandPose};
use crate::geometry::{project, project_camera_frame_jacobian, ErrorStats, Pose, Rig, Rotation};

type M6x5 = SMatrix<f64, 6, 5>;
type M5 = SMatrix<f64, 5, 5>;
type M6 = SMatrix<f64, 6, 6>;
type V5 = SVector<f64, 5>;
type V6 = SVector<f64, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaSettings {
    /// Huber threshold on the pixel residual norm.
    pub huber_px: f64,
    pub max_iterations: usize,
    /// Stop when the relative decrease of the robust cost falls below this.
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for BaSettings {
    fn default() -> Self {
        BaSettings { huber_px: 2.0, max_iterations: 200, relative_tolerance: 1e-10, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// Refined rig in the gauge camera's frame.
    pub rig: Rig,
    /// Wand pose per sample time; `None` for samples that could not be
    /// initialized.
    pub wand_poses: Vec<Option<WandPose>>,
    pub sample_times: Vec<f64>,
    pub per_camera: Vec<Option<ErrorStats>>,
    pub converged: bool,
    pub iterations: usize,
    /// Robust cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

struct Obs {
    camera: usize,
    marker: usize,
    pixel: Vector2<f64>,
}

struct SampleBlock {
    h_ww: M5,
    g_w: V5,
    /// `(camera block, H_cw)`.
    h_cw: Vec<(usize, M6x5)>,
    cams: Vec<(usize, M6, V6)>,
}

fn huber(e: f64, k: f64) -> (f64, f64) {
    if e <= k {
        (e * e, 1.0)
    } else {
        (2.0 * k * e - k * k, k / e)
    }
}

fn skew(v: &Vector3<f64>) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Orthonormal basis of the plane orthogonal to `u`.
fn tangent_basis(u: &Vector3<f64>) -> SMatrix<f64, 3, 2> {
    let a = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = u.cross(&a).normalize();
    let b2 = u.cross(&b1);
    SMatrix::<f64, 3, 2>::from_columns(&[b1, b2])
}

struct State<'a> {
    problem: &'a CalibrationProblem,
    poses: Vec<Pose>,
    wands: Vec<WandPose>,
}

impl State<'_> {
    fn residual(&self, s: usize, o: &Obs) -> Result<Vector2<f64>, CalibError> {
        let x = self.wands[s].marker(&self.problem.wand, o.marker);
        let cam = &self.problem.rig.cameras[o.camera];
        let pc = self.poses[o.camera].transform_point(&x);
        let (px, _) = project_camera_frame_jacobian(&pc, &cam.intrinsics)?;
        Ok(px - o.pixel)
    }

    fn cost(&self, obs: &[Vec<Obs>], k: f64) -> Result<f64, CalibError> {
        let per: Result<Vec<f64>, CalibError> = obs
            .par_iter()
            .enumerate()
            .map(|(s, list)| list.iter().map(|o| Ok(huber(self.residual(s, o)?.norm(), k).0)).sum())
            .collect();
        Ok(per?.iter().sum())
    }
}

/// Levenberg–Marquardt over all non-gauge camera poses (6 parameters each)
/// and wand poses (point plus a unit direction, 5 parameters each) with a
/// Huber loss, solved through the Schur complement on the camera block.
/// The gauge camera is held fixed; the result is expressed in its frame.
pub fn bundle_adjust(
    problem: &CalibrationProblem,
    initial: &Rig,
    settings: &BaSettings,
) -> Result<CalibrationResult, CalibError> {
    problem.validate()?;
    if initial.cameras.len() != problem.rig.cameras.len() {
        return Err(CalibError::InvalidProblem("initial rig has a different camera count".into()));
    }
    let rig = initial.gauge_aligned();
    let sample_times = problem.sample_times();
    let init = initial_wand_poses(problem, &rig);
    let (_, table) = problem.observation_table();

    // Only initialized samples take part.
    let active: Vec<usize> = (0..sample_times.len()).filter(|&s| init[s].is_some()).collect();
    let mut obs: Vec<Vec<Obs>> = active.iter().map(|_| Vec::new()).collect();
    for (c, t) in table.iter().enumerate() {
        for (&(s, marker), &pixel) in t {
            if let Ok(i) = active.binary_search(&s) {
                obs[i].push(Obs { camera: c, marker, pixel });
            }
        }
    }
    let n_cams = rig.cameras.len();
    let block: Vec<Option<usize>> = {
        let mut next = 0;
        (0..n_cams)
            .map(|c| {
                (c != rig.gauge).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let nc = n_cams - 1;

    let mut state = State {
        problem,
        poses: rig.cameras.iter().map(|c| c.pose).collect(),
        wands: active.iter().map(|&s| init[s].unwrap()).collect(),
    };
    let k = settings.huber_px;
    let mut cost = state.cost(&obs, k)?;
    if !cost.is_finite() {
        return Err(CalibError::DivergedOptimization);
    }
    let mut history = vec![cost];
    let mut lambda = settings.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    let tiny = 1e-20 * obs.iter().map(Vec::len).sum::<usize>().max(1) as f64;

    while iterations < settings.max_iterations {
        if cost <= tiny {
            converged = true;
            break;
        }
        iterations += 1;
        let blocks = linearize(&state, &obs, &block, k)?;
        let grad = blocks
            .iter()
            .flat_map(|b| b.g_w.iter().chain(b.cams.iter().flat_map(|c| c.2.iter())))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if grad < 1e-12 {
            converged = true;
            break;
        }
        let mut accepted = None;
        while lambda < 1e12 {
            match solve(&blocks, nc, lambda) {
                Some((dc, dw)) => {
                    let cand = apply(&state, &dc, &dw, &block);
                    let new_cost = cand.cost(&obs, k).unwrap_or(f64::INFINITY);
                    if new_cost.is_finite() && new_cost < cost {
                        accepted = Some((cand, new_cost));
                        lambda = (lambda * 0.1).max(1e-12);
                        break;
                    }
                }
                None if lambda >= 1e10 => return Err(CalibError::SingularNormalEquations),
                None => {}
            }
            lambda *= 10.0;
        }
        let Some((cand, new_cost)) = accepted else {
            // No damping improves the cost: a minimum to working precision.
            converged = true;
            break;
        };
        let rel = (cost - new_cost) / cost;
        state.poses = cand.poses;
        state.wands = cand.wands;
        cost = new_cost;
        history.push(cost);
        if rel < settings.relative_tolerance {
            converged = true;
            break;
        }
    }

    let mut out_rig = rig.clone();
    for (c, p) in out_rig.cameras.iter_mut().zip(&state.poses) {
        c.pose = *p;
    }
    let mut wand_poses = vec![None; sample_times.len()];
    for (i, &s) in active.iter().enumerate() {
        wand_poses[s] = Some(state.wands[i]);
    }
    let per_camera = reprojection_stats(&CalibrationProblem { rig: out_rig.clone(), ..problem.clone() }, &wand_poses)?;
    Ok(CalibrationResult {
        rig: out_rig,
        wand_poses,
        sample_times,
        per_camera,
        converged,
        iterations,
        cost_history: history,
    })
}

fn linearize(state: &State, obs: &[Vec<Obs>], block: &[Option<usize>], k: f64) -> Result<Vec<SampleBlock>, CalibError> {
    let wand = &state.problem.wand;
    obs.par_iter()
        .enumerate()
        .map(|(s, list)| {
            let w = &state.wands[s];
            let basis = tangent_basis(&w.direction);
            let mut b = SampleBlock { h_ww: M5::zeros(), g_w: V5::zeros(), h_cw: Vec::new(), cams: Vec::new() };
            for o in list {
                let d = wand.offsets[o.marker];
                let x = w.point + d * w.direction;
                let pose = &state.poses[o.camera];
                let r = pose.rotation.matrix();
                let rx = r * x;
                let pc = rx + pose.translation;
                let intr = &state.problem.rig.cameras[o.camera].intrinsics;
                let (px, jp): (Vector2<f64>, Matrix2x3<f64>) = project_camera_frame_jacobian(&pc, intr)?;
                let res = px - o.pixel;
                let (_, weight) = huber(res.norm(), k);
                let jpr = jp * r;
                let mut jw = SMatrix::<f64, 2, 5>::zeros();
                jw.fixed_view_mut::<2, 3>(0, 0).copy_from(&jpr);
                jw.fixed_view_mut::<2, 2>(0, 3).copy_from(&(jpr * basis * d));
                b.h_ww += weight * jw.transpose() * jw;
                b.g_w += weight * jw.transpose() * res;
                if let Some(ci) = block[o.camera] {
                    let mut jc = SMatrix::<f64, 2, 6>::zeros();
                    jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&rx)));
                    jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
                    let hcw = weight * jc.transpose() * jw;
                    let hcc = weight * jc.transpose() * jc;
                    let gc = weight * jc.transpose() * res;
                    match b.cams.iter_mut().position(|e| e.0 == ci) {
                        Some(i) => {
                            b.cams[i].1 += hcc;
                            b.cams[i].2 += gc;
                            b.h_cw[i].1 += hcw;
                        }
                        None => {
                            b.cams.push((ci, hcc, gc));
                            b.h_cw.push((ci, hcw));
                        }
                    }
                }
            }
            Ok(b)
        })
        .collect()
}

fn damp<const N: usize>(h: &SMatrix<f64, N, N>, lambda: f64) -> SMatrix<f64, N, N> {
    let mut d = *h;
    for i in 0..N {
        d[(i, i)] += lambda * h[(i, i)] + 1e-12;
    }
    d
}

/// Damped Gauss–Newton step through the Schur complement.
fn solve(blocks: &[SampleBlock], nc: usize, lambda: f64) -> Option<(DVector<f64>, Vec<V5>)> {
    let n = 6 * nc;
    let mut s_mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut inv_ww = Vec::with_capacity(blocks.len());
    // Undamped camera diagonals are summed first so that the damping is
    // applied to the full block.
    let mut hcc = vec![M6::zeros(); nc];
    for b in blocks {
        for (ci, h, g) in &b.cams {
            hcc[*ci] += h;
            let mut v = rhs.fixed_rows_mut::<6>(6 * ci);
            v -= g;
        }
    }
    for (ci, h) in hcc.iter().enumerate() {
        s_mat.fixed_view_mut::<6, 6>(6 * ci, 6 * ci).copy_from(&damp(h, lambda));
    }
    for b in blocks {
        let inv = damp(&b.h_ww, lambda).cholesky()?.inverse();
        let y = inv * b.g_w;
        for (ci, hcw) in &b.h_cw {
            let t = hcw * inv;
            let mut v = rhs.fixed_rows_mut::<6>(6 * ci);
            v += hcw * y;
            for (cj, hcw_j) in &b.h_cw {
                let m = t * hcw_j.transpose();
                let mut view = s_mat.fixed_view_mut::<6, 6>(6 * ci, 6 * cj);
                view -= m;
            }
        }
        inv_ww.push(inv);
    }
    let dc = if n > 0 { s_mat.cholesky()?.solve(&rhs) } else { rhs };
    let dw = blocks
        .iter()
        .zip(&inv_ww)
        .map(|(b, inv)| {
            let mut g = b.g_w;
            for (ci, hcw) in &b.h_cw {
                g += hcw.transpose() * dc.fixed_rows::<6>(6 * ci);
            }
            -(inv * g)
        })
        .collect();
    Some((dc, dw))
}

fn apply<'a>(state: &State<'a>, dc: &DVector<f64>, dw: &[V5], block: &[Option<usize>]) -> State<'a> {
    let poses = state
        .poses
        .iter()
        .zip(block)
        .map(|(p, b)| match b {
            Some(ci) => {
                let d = dc.fixed_rows::<6>(6 * ci);
                let dr = Rotation::from_rotation_vector(&Vector3::new(d[0], d[1], d[2]));
                Pose::new(dr * p.rotation, p.translation + Vector3::new(d[3], d[4], d[5]))
            }
            None => *p,
        })
        .collect();
    let wands = state
        .wands
        .iter()
        .zip(dw)
        .map(|(w, d)| {
            let basis = tangent_basis(&w.direction);
            let dir = w.direction + basis * nalgebra::Vector2::new(d[3], d[4]);
            WandPose::new(w.point + Vector3::new(d[0], d[1], d[2]), dir)
        })
        .collect();
    State { problem: state.problem, poses, wands }
}

/// Per-camera statistics of the Euclidean reprojection residuals of all
/// detections whose sample has a wand pose.
pub fn reprojection_stats(
    problem: &CalibrationProblem,
    wand_poses: &[Option<WandPose>],
) -> Result<Vec<Option<ErrorStats>>, CalibError> {
    let (times, table) = problem.observation_table();
    if wand_poses.len() != times.len() {
        return Err(CalibError::InvalidProblem("one wand pose per sample time is required".into()));
    }
    let mut out = Vec::with_capacity(table.len());
    for (cam, t) in problem.rig.cameras.iter().zip(&table) {
        let mut errs = Vec::with_capacity(t.len());
        for (&(s, m), px) in t {
            if let Some(w) = &wand_poses[s] {
                errs.push((project(&w.marker(&problem.wand, m), cam)? - px).norm());
            }
        }
        out.push(ErrorStats::from_values(&errs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{initialize_extrinsics, simulate_wand_capture, CaptureSettings, WandGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wand_poses(n: usize, seed: u64) -> Vec<WandPose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = Vector3::new(rng.gen_range(-0.6..0.4), rng.gen_range(-0.4..0.2), rng.gen_range(0.2..0.8));
                let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5));
                WandPose::new(p, d)
            })
            .collect()
    }

    fn problem(n: usize, noise: f64, seed: u64) -> CalibrationProblem {
        let rig = Rig::table_tennis_default();
        let wand = WandGeometry::default();
        let settings = CaptureSettings { noise_px: noise, seed, ..Default::default() };
        let cap = simulate_wand_capture(&rig, &wand, &wand_poses(n, seed), &settings).unwrap();
        CalibrationProblem::new(rig, wand, cap.detections).unwrap()
    }

    fn max_center_error(a: &Rig, b: &Rig) -> f64 {
        a.cameras.iter().zip(&b.cameras).map(|(x, y)| (x.pose.center() - y.pose.center()).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn noiseless_recovers_rig() {
        let p = problem(60, 0.0, 1);
        let init = initialize_extrinsics(&p).unwrap();
        let res = bundle_adjust(&p, &init, &BaSettings::default()).unwrap();
        assert!(res.converged);
        for s in res.per_camera.iter().flatten() {
            assert!(s.mean <= 1e-4, "{s:?}");
        }
        assert!(max_center_error(&res.rig, &p.rig.gauge_aligned()) <= 1e-4);
        assert!(res.rig.cameras[0].pose.rotation.angle() < 1e-12);
        assert!(res.rig.cameras[0].pose.translation.norm() < 1e-12);
    }

    #[test]
    fn noisy_mae_matches_noise_level() {
        let p = problem(120, 0.3, 2);
        let init = initialize_extrinsics(&p).unwrap();
        let res = bundle_adjust(&p, &init, &BaSettings::default()).unwrap();
        for s in res.per_camera.iter().flatten() {
            assert!((0.2..=0.5).contains(&s.mean), "{s:?}");
        }
        for w in res.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn ground_truth_start_converges_immediately() {
        let p = problem(40, 0.0, 3);
        let res = bundle_adjust(&p, &p.rig, &BaSettings::default()).unwrap();
        assert!(res.iterations <= 2);
        for s in res.per_camera.iter().flatten() {
            assert!(s.mean <= 1e-12, "{s:?}");
        }
    }

    #[test]
    fn refined_wands_stay_collinear_at_offsets() {
        let p = problem(40, 0.2, 4);
        let init = initialize_extrinsics(&p).unwrap();
        let res = bundle_adjust(&p, &init, &BaSettings::default()).unwrap();
        for w in res.wand_poses.iter().flatten() {
            assert!((w.direction.norm() - 1.0).abs() < 1e-12);
            let m = w.markers(&p.wand);
            assert!((m[1] - m[0]).cross(&(m[2] - m[0])).norm() < 1e-12);
        }
    }

    #[test]
    fn result_is_gauge_invariant() {
        let p = problem(40, 0.1, 5);
        let init = initialize_extrinsics(&p).unwrap();
        let a = bundle_adjust(&p, &init, &BaSettings::default()).unwrap();
        // The same rig expressed in another world frame.
        let g = Pose::new(Rotation::from_rotation_vector(&Vector3::new(0.3, -0.2, 0.5)), Vector3::new(1.0, 2.0, -0.5));
        let mut moved = init.clone();
        for c in &mut moved.cameras {
            c.pose = c.pose.compose(&g);
        }
        let b = bundle_adjust(&p, &moved, &BaSettings::default()).unwrap();
        assert!(max_center_error(&a.rig, &b.rig) < 1e-6);
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        for u in [Vector3::x(), Vector3::new(0.3, -0.4, 0.866).normalize(), Vector3::new(0.0, 0.0, -1.0)] {
            let b = tangent_basis(&u);
            assert!((b.transpose() * b - nalgebra::Matrix2::identity()).norm() < 1e-12);
            assert!((b.transpose() * u).norm() < 1e-12);
        }
    }
}
