use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

use super::{project, project_camera_frame_jacobian, CameraModel, GeometryError};

/// Rays closer than this to parallel are rejected.
pub const MIN_RAY_ANGLE_DEG: f64 = 0.1;

const GN_ITERATIONS: usize = 20;

/// Triangulates a world point from pixel observations: a linear DLT estimate
/// refined by Gauss-Newton on the summed squared reprojection error.
pub fn triangulate(observations: &[(&CameraModel, Vector2<f64>)]) -> Result<Vector3<f64>, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::InsufficientObservations);
    }
    let rays: Vec<Vector3<f64>> = observations.iter().map(|(c, px)| c.ray_direction(px)).collect();
    let min_cos = MIN_RAY_ANGLE_DEG.to_radians().cos();
    let widest = rays
        .iter()
        .enumerate()
        .flat_map(|(i, a)| rays[i + 1..].iter().map(move |b| a.dot(b).clamp(-1.0, 1.0)))
        .fold(1.0f64, f64::min);
    if widest > min_cos {
        return Err(GeometryError::DegenerateGeometry);
    }

    let mut a = DMatrix::<f64>::zeros(2 * observations.len(), 4);
    for (i, (cam, px)) in observations.iter().enumerate() {
        let n = cam.intrinsics.pixel_to_normalized(px);
        let r = cam.pose.rotation.matrix();
        let t = cam.pose.translation;
        for (row, coord, axis) in [(2 * i, n.x, 0usize), (2 * i + 1, n.y, 1usize)] {
            for j in 0..3 {
                a[(row, j)] = coord * r[(2, j)] - r[(axis, j)];
            }
            a[(row, 3)] = coord * t.z - t[axis];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateGeometry)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(GeometryError::DegenerateGeometry)?;
    let h = v_t.row(min_idx);
    if h[3].abs() < 1e-15 {
        return Err(GeometryError::DegenerateGeometry);
    }
    let mut x = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    refine_point(&mut x, observations);
    Ok(x)
}

/// Gauss-Newton refinement of a point against pixel observations. Leaves
/// `x` unchanged when a step fails to reduce the error.
pub fn refine_point(x: &mut Vector3<f64>, observations: &[(&CameraModel, Vector2<f64>)]) {
    let cost = |p: &Vector3<f64>| -> Option<f64> {
        observations
            .iter()
            .map(|(c, px)| project(p, c).ok().map(|q| (q - px).norm_squared()))
            .sum()
    };
    let Some(mut current) = cost(x) else { return };
    for _ in 0..GN_ITERATIONS {
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for (cam, px) in observations {
            let pc = cam.pose.transform_point(x);
            let Ok((q, j_pc)) = project_camera_frame_jacobian(&pc, &cam.intrinsics) else { return };
            let j = j_pc * cam.pose.rotation.matrix();
            let r = q - px;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.cholesky().map(|c| c.solve(&jtr)) else { return };
        let candidate = *x - step;
        match cost(&candidate) {
            Some(c) if c <= current => {
                *x = candidate;
                let done = current - c <= 1e-15 * current.max(1e-30) || step.norm() < 1e-14;
                current = c;
                if done {
                    break;
                }
            }
            _ => break,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraKind, Pose, Rotation};

    fn camera_at(eye: Vector3<f64>) -> CameraModel {
        CameraModel::new(
            "c",
            CameraIntrinsics::new(1000.0, 1000.0, 640.0, 512.0, 1280, 1024),
            Pose::look_at(&eye, &Vector3::new(0.0, 0.0, 0.5), &Vector3::z()),
            CameraKind::Frame { fps: 140.0 },
        )
    }

    #[test]
    fn round_trip_two_cameras() {
        let a = camera_at(Vector3::new(2.0, 1.5, 2.5));
        let b = camera_at(Vector3::new(-2.0, 1.5, 2.5));
        let p = Vector3::new(0.12, -0.3, 0.77);
        let obs = [(&a, project(&p, &a).unwrap()), (&b, project(&p, &b).unwrap())];
        let x = triangulate(&obs).unwrap();
        assert!((x - p).norm() < 1e-6);
    }

    #[test]
    fn single_camera_is_insufficient() {
        let a = camera_at(Vector3::new(2.0, 1.5, 2.5));
        let p = Vector3::new(0.0, 0.0, 0.5);
        assert_eq!(
            triangulate(&[(&a, project(&p, &a).unwrap())]),
            Err(GeometryError::InsufficientObservations)
        );
    }

    #[test]
    fn identical_poses_are_degenerate() {
        let a = camera_at(Vector3::new(2.0, 1.5, 2.5));
        let b = a.clone();
        let p = Vector3::new(0.1, 0.1, 0.5);
        let px = project(&p, &a).unwrap();
        assert_eq!(triangulate(&[(&a, px), (&b, px)]), Err(GeometryError::DegenerateGeometry));
    }

    #[test]
    fn invariant_under_global_rigid_transform() {
        let cams = [
            camera_at(Vector3::new(2.0, 1.5, 2.5)),
            camera_at(Vector3::new(-2.0, 1.5, 2.5)),
            camera_at(Vector3::new(0.0, -2.5, 1.8)),
        ];
        let p = Vector3::new(0.3, 0.2, 0.9);
        // Slightly perturbed pixels so the least-squares solution is non-trivial.
        let offsets = [Vector2::new(0.4, -0.2), Vector2::new(-0.3, 0.1), Vector2::new(0.2, 0.5)];
        let obs: Vec<_> = cams.iter().zip(offsets).map(|(c, o)| (c, project(&p, c).unwrap() + o)).collect();
        let x = triangulate(&obs).unwrap();

        let g = Pose::new(Rotation::from_rotation_vector(&Vector3::new(0.3, -0.7, 1.1)), Vector3::new(4.0, -2.0, 1.0));
        let moved: Vec<CameraModel> = cams
            .iter()
            .map(|c| {
                let mut m = c.clone();
                m.pose = c.pose.compose(&g.inverse());
                m
            })
            .collect();
        let obs2: Vec<_> = moved.iter().zip(&obs).map(|(c, (_, px))| (c, *px)).collect();
        let y = triangulate(&obs2).unwrap();
        assert!((g.inverse().transform_point(&y) - x).norm() < 1e-6);
    }
}
