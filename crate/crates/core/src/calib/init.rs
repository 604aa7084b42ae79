use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};

use super::{CalibError, CalibrationProblem, WandPose};
use crate::geometry::{triangulate, CameraModel, Pose, Rig, Rotation};

/// Minimum number of shared sample times for a camera pair to be chained.
pub const MIN_COMMON_SAMPLES: usize = 8;

type Table = BTreeMap<(usize, usize), Vector2<f64>>;

/// Initial extrinsics in the gauge camera's frame: pairwise essential
/// matrices (normalized 8-point, cheirality check), metric scale from the
/// wand segment lengths, chained along a maximum-overlap spanning tree.
pub fn initialize_extrinsics(problem: &CalibrationProblem) -> Result<Rig, CalibError> {
    problem.validate()?;
    let (_, table) = problem.observation_table();
    let cams = &problem.rig.cameras;
    let normalized: Vec<Table> = table
        .iter()
        .zip(cams)
        .map(|(t, c)| t.iter().map(|(k, px)| (*k, c.intrinsics.pixel_to_normalized(px))).collect())
        .collect();

    let n = cams.len();
    let gauge = problem.rig.gauge;
    let mut poses: Vec<Option<Pose>> = vec![None; n];
    poses[gauge] = Some(Pose::identity());
    loop {
        // Best edge from a placed camera to an unplaced one.
        let mut best: Option<(usize, usize, usize)> = None;
        for a in (0..n).filter(|&a| poses[a].is_some()) {
            for b in (0..n).filter(|&b| poses[b].is_none()) {
                let common = common_samples(&normalized[a], &normalized[b]);
                if common >= MIN_COMMON_SAMPLES && best.map_or(true, |(_, _, c)| common > c) {
                    best = Some((a, b, common));
                }
            }
        }
        let Some((a, b, _)) = best else { break };
        let rel = relative_pose(&normalized[a], &normalized[b], &problem.wand.offsets)?;
        poses[b] = Some(rel.compose(&poses[a].unwrap()));
    }
    if let Some(missing) = poses.iter().position(|p| p.is_none()) {
        return Err(CalibError::InsufficientCorrespondences(missing));
    }
    let cameras = cams
        .iter()
        .zip(poses)
        .map(|(c, p)| CameraModel { pose: p.unwrap(), ..c.clone() })
        .collect();
    Ok(Rig::new(cameras, gauge)?)
}

fn common_samples(a: &Table, b: &Table) -> usize {
    a.keys().filter(|k| b.contains_key(k)).map(|k| k.0).collect::<BTreeSet<_>>().len()
}

/// Hartley normalization: centroid to origin, mean distance `sqrt(2)`.
fn normalizing_transform(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let mean_d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_d > 0.0 { 2f64.sqrt() / mean_d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn is_collinear(pts: &[Vector2<f64>]) -> bool {
    let n = pts.len() as f64;
    let c = pts.iter().sum::<Vector2<f64>>() / n;
    let mut cov = nalgebra::Matrix2::<f64>::zeros();
    for p in pts {
        let d = p - c;
        cov += d * d.transpose();
    }
    let ev = cov.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    !(hi > 0.0) || lo / hi < 1e-10
}

/// Relative pose `X_b = R X_a + t` from normalized correspondences, with
/// metric scale from the known marker offsets.
fn relative_pose(a: &Table, b: &Table, offsets: &[f64; 3]) -> Result<Pose, CalibError> {
    let keys: Vec<(usize, usize)> = a.keys().filter(|k| b.contains_key(k)).copied().collect();
    if keys.len() < 8 {
        return Err(CalibError::DegenerateMotion);
    }
    let xa: Vec<Vector2<f64>> = keys.iter().map(|k| a[k]).collect();
    let xb: Vec<Vector2<f64>> = keys.iter().map(|k| b[k]).collect();
    if is_collinear(&xa) || is_collinear(&xb) {
        return Err(CalibError::DegenerateMotion);
    }
    let ta = normalizing_transform(&xa);
    let tb = normalizing_transform(&xb);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (pa, pb) in xa.iter().zip(&xb) {
        let p = ta * Vector3::new(pa.x, pa.y, 1.0);
        let q = tb * Vector3::new(pb.x, pb.y, 1.0);
        // Row of the constraint q^T F p = 0.
        let row = SVector::<f64, 9>::from_column_slice(&[
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            1.0,
        ]);
        ata += row * row.transpose();
    }
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    // A one-dimensional null space is required; eigenvalues are squared
    // singular values.
    let (l0, l1, l8) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[8]]);
    if !(l8 > 0.0) || l1 / l8 < 1e-18 || l1 <= 10.0 * l0.abs() {
        return Err(CalibError::DegenerateMotion);
    }
    let f = eig.eigenvectors.column(order[0]);
    let f_norm = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let e = tb.transpose() * f_norm * ta;
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u.ok_or(CalibError::DegenerateMotion)?, svd.v_t.ok_or(CalibError::DegenerateMotion)?);
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t_dir: Vector3<f64> = u.column(2).into_owned();
    let candidates = [
        (u * w * v_t, t_dir),
        (u * w * v_t, -t_dir),
        (u * w.transpose() * v_t, t_dir),
        (u * w.transpose() * v_t, -t_dir),
    ];
    let (r, t) = candidates
        .iter()
        .max_by_key(|(r, t)| {
            xa.iter().zip(&xb).filter(|(pa, pb)| triangulate_pair(pa, pb, r, t).is_some_and(|x| x.z > 0.0 && (r * x + t).z > 0.0)).count()
        })
        .copied()
        .unwrap();

    // Metric scale: known distances between markers of the same sample.
    let mut ratios = Vec::new();
    let samples: BTreeSet<usize> = keys.iter().map(|k| k.0).collect();
    for s in samples {
        let pts: Vec<(usize, Vector3<f64>)> = (0..3)
            .filter_map(|m| {
                let (pa, pb) = (a.get(&(s, m))?, b.get(&(s, m))?);
                triangulate_pair(pa, pb, &r, &t).map(|x| (m, x))
            })
            .collect();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let est = (pts[i].1 - pts[j].1).norm();
                if est > 1e-12 {
                    ratios.push((offsets[pts[j].0] - offsets[pts[i].0]).abs() / est);
                }
            }
        }
    }
    if ratios.is_empty() {
        return Err(CalibError::DegenerateMotion);
    }
    ratios.sort_by(f64::total_cmp);
    let scale = ratios[ratios.len() / 2];
    Ok(Pose::new(Rotation::from_matrix(&r), t * scale))
}

/// Linear two-view triangulation in camera `a` coordinates.
fn triangulate_pair(pa: &Vector2<f64>, pb: &Vector2<f64>, r: &Matrix3<f64>, t: &Vector3<f64>) -> Option<Vector3<f64>> {
    let mut m = SMatrix::<f64, 4, 4>::zeros();
    // Camera a: [I | 0]; camera b: [R | t].
    let pa_rows = [(pa.x, 0usize), (pa.y, 1usize)];
    for (i, (coord, axis)) in pa_rows.into_iter().enumerate() {
        for j in 0..3 {
            m[(i, j)] = coord * if j == 2 { 1.0 } else { 0.0 } - if j == axis { 1.0 } else { 0.0 };
        }
        m[(i, 3)] = 0.0;
    }
    for (i, (coord, axis)) in [(pb.x, 0usize), (pb.y, 1usize)].into_iter().enumerate() {
        for j in 0..3 {
            m[(2 + i, j)] = coord * r[(2, j)] - r[(axis, j)];
        }
        m[(2 + i, 3)] = coord * t.z - t[axis];
    }
    let eig = (m.transpose() * m).symmetric_eigen();
    let i = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(i);
    (h[3].abs() > 1e-14).then(|| Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Wand pose per sample triangulated with `rig`; `None` when fewer than two
/// markers can be triangulated.
pub fn initial_wand_poses(problem: &CalibrationProblem, rig: &Rig) -> Vec<Option<WandPose>> {
    let (times, table) = problem.observation_table();
    let d = problem.wand.offsets;
    (0..times.len())
        .map(|s| {
            let pts: Vec<(f64, Vector3<f64>)> = (0..3)
                .filter_map(|m| {
                    let obs: Vec<(&CameraModel, Vector2<f64>)> = rig
                        .cameras
                        .iter()
                        .zip(&table)
                        .filter_map(|(c, t)| t.get(&(s, m)).map(|px| (c, *px)))
                        .collect();
                    triangulate(&obs).ok().map(|x| (d[m], x))
                })
                .collect();
            if pts.len() < 2 {
                return None;
            }
            // Least-squares line through the markers with known offsets.
            let n = pts.len() as f64;
            let dm = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let xm = pts.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
            let num: Vector3<f64> = pts.iter().map(|(di, x)| (di - dm) * (x - xm)).sum();
            let den: f64 = pts.iter().map(|(di, _)| (di - dm).powi(2)).sum();
            let u = (num / den).try_normalize(1e-12)?;
            Some(WandPose { point: xm - dm * u, direction: u })
        })
        .collect()
}
