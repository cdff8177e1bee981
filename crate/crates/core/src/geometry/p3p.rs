//! Perspective-three-point absolute pose: Grunert's quartic over the point
//! ranges, Gauss-Newton range polish and Kabsch alignment, wrapped in a
//! RANSAC loop with reprojection gating.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use super::camera::CameraModel;
use super::poly;
use super::se3::Se3;

/// A 2D-3D correspondence: world point and its normalized bearing (z = 1).
pub type WorldBearing = (Vector3<f64>, Vector3<f64>);

/// Candidate camera poses `T_cw` (world-to-camera) from three
/// correspondences. Returns an empty list for collinear world points.
pub fn p3p_solve(points: &[WorldBearing; 3]) -> Vec<Se3> {
    let p1 = points[0].0;
    let p2 = points[1].0;
    let p3 = points[2].0;
    let f1 = points[0].1.normalize();
    let f2 = points[1].1.normalize();
    let f3 = points[2].1.normalize();

    let span = (p2 - p1).cross(&(p3 - p1)).norm();
    let scale = (p2 - p1).norm().max((p3 - p1).norm());
    if span < 1e-10 * scale * scale {
        return vec![];
    }

    let a = (p2 - p3).norm();
    let b = (p1 - p3).norm();
    let c = (p1 - p2).norm();
    if a < 1e-12 || b < 1e-12 || c < 1e-12 {
        return vec![];
    }
    let cos_alpha = f2.dot(&f3);
    let cos_beta = f1.dot(&f3);
    let cos_gamma = f1.dot(&f2);

    // With u = s2/s1, v = s3/s1 the law-of-cosines ratios give
    //   u = n(v) / d(v)          (degree 2 over degree 1)
    // and substituting into the c-side ratio yields a quartic in v.
    let (a2, b2, c2) = (a * a, b * b, c * c);
    let k_ac = (a2 - c2) / b2;
    // n(v) = k_ac (1 + v^2 - 2 v cos_beta) + 1 - v^2
    let base = [1.0, -2.0 * cos_beta, 1.0];
    let n = poly::add(&poly::scale(&base, k_ac), &[1.0, 0.0, -1.0]);
    // d(v) = 2 (cos_gamma - v cos_alpha)
    let d = [2.0 * cos_gamma, -2.0 * cos_alpha];
    // quartic: n^2 - 2 cos_gamma n d + (1 - (c2/b2)(1 + v^2 - 2 v cos_beta)) d^2 = 0
    let term1 = poly::mul(&n, &n);
    let term2 = poly::scale(&poly::mul(&n, &d), -2.0 * cos_gamma);
    let paren = poly::sub(&[1.0], &poly::scale(&base, c2 / b2));
    let term3 = poly::mul(&paren, &poly::mul(&d, &d));
    let quartic = poly::add(&poly::add(&term1, &term2), &term3);

    let mut poses = Vec::new();
    for v in poly::real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let dv = poly::eval(&d, v);
        if dv.abs() < 1e-12 {
            continue;
        }
        let u = poly::eval(&n, v) / dv;
        if u <= 0.0 {
            continue;
        }
        let denom = 1.0 + v * v - 2.0 * v * cos_beta;
        if denom <= 0.0 {
            continue;
        }
        let mut s1 = b / denom.sqrt();
        let mut s2 = u * s1;
        let mut s3 = v * s1;

        // Newton polish of the three range equations.
        for _ in 0..3 {
            let r = Vector3::new(
                s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * cos_alpha - a2,
                s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cos_beta - b2,
                s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cos_gamma - c2,
            );
            let j = Matrix3::new(
                0.0,
                2.0 * s2 - 2.0 * s3 * cos_alpha,
                2.0 * s3 - 2.0 * s2 * cos_alpha,
                2.0 * s1 - 2.0 * s3 * cos_beta,
                0.0,
                2.0 * s3 - 2.0 * s1 * cos_beta,
                2.0 * s1 - 2.0 * s2 * cos_gamma,
                2.0 * s2 - 2.0 * s1 * cos_gamma,
                0.0,
            );
            match j.lu().solve(&r) {
                Some(step) => {
                    s1 -= step[0];
                    s2 -= step[1];
                    s3 -= step[2];
                    if step.norm() < 1e-14 * (s1 + s2 + s3) {
                        break;
                    }
                }
                None => break,
            }
        }
        if s1 <= 0.0 || s2 <= 0.0 || s3 <= 0.0 {
            continue;
        }

        // Absolute orientation between world points and camera points.
        let q1 = f1 * s1;
        let q2 = f2 * s2;
        let q3 = f3 * s3;
        let pc = (p1 + p2 + p3) / 3.0;
        let qc = (q1 + q2 + q3) / 3.0;
        let mut h = Matrix3::zeros();
        for (p, q) in [(p1, q1), (p2, q2), (p3, q3)] {
            h += (p - pc) * (q - qc).transpose();
        }
        let svd = h.svd(true, true);
        let (u_m, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => continue,
        };
        let mut s = Matrix3::identity();
        if (v_t.transpose() * u_m.transpose()).determinant() < 0.0 {
            s[(2, 2)] = -1.0;
        }
        let rot = v_t.transpose() * s * u_m.transpose();
        let t = qc - rot * pc;
        poses.push(Se3::from_matrix3(&rot, t));
    }
    poses
}

#[derive(Debug, Clone)]
pub struct P3pRansacResult {
    /// World-to-camera pose.
    pub pose_cw: Se3,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
}

/// P3P RANSAC over 2D-3D correspondences; the inlier test is the
/// undistorted-pixel reprojection error.
pub fn p3p_ransac(
    points: &[WorldBearing],
    camera: &CameraModel,
    threshold_px: f64,
    confidence: f64,
    max_iterations: usize,
    rng: &mut impl Rng,
) -> Option<P3pRansacResult> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    let obs_px: Vec<_> = points
        .iter()
        .map(|(_, bearing)| {
            let b = bearing / bearing.z;
            nalgebra::Vector2::new(camera.fx * b.x + camera.cx, camera.fy * b.y + camera.cy)
        })
        .collect();

    let mut best: Option<P3pRansacResult> = None;
    let mut required = max_iterations;
    let mut it = 0;
    while it < required.min(max_iterations) {
        it += 1;
        let idx = sample(rng, n, 3);
        let tri = [points[idx.index(0)], points[idx.index(1)], points[idx.index(2)]];
        for pose in p3p_solve(&tri) {
            let mut inliers = vec![false; n];
            let mut count = 0;
            for (i, (pw, _)) in points.iter().enumerate() {
                if let Some(px) = camera.project_world(&pose, pw) {
                    if (px - obs_px[i]).norm() < threshold_px {
                        inliers[i] = true;
                        count += 1;
                    }
                }
            }
            if count >= 4 && best.as_ref().map_or(true, |b| count > b.num_inliers) {
                best = Some(P3pRansacResult { pose_cw: pose, inliers, num_inliers: count });
                let w = count as f64 / n as f64;
                let denom = (1.0 - w.powi(3)).max(1e-12).ln();
                if denom < 0.0 {
                    required = (((1.0 - confidence).ln() / denom).ceil() as usize).max(1);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Se3 {
        let q = UnitQuaternion::from_euler_angles(
            (rng.gen::<f64>() - 0.5) * 0.8,
            (rng.gen::<f64>() - 0.5) * 0.8,
            (rng.gen::<f64>() - 0.5) * 0.8,
        );
        let t = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 2.0;
        Se3::from_parts(q, t)
    }

    fn observe(pose_cw: &Se3, pw: &Vector3<f64>) -> Vector3<f64> {
        let pc = pose_cw.transform(pw);
        pc / pc.z
    }

    #[test]
    fn noiseless_three_plus_one_recovers_exact_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..100 {
            let pose_cw = random_pose(&mut rng);
            let pws: Vec<Vector3<f64>> = (0..4)
                .map(|_| {
                    let pc = Vector3::new(
                        (rng.gen::<f64>() - 0.5) * 2.0,
                        (rng.gen::<f64>() - 0.5) * 2.0,
                        2.0 + rng.gen::<f64>() * 4.0,
                    );
                    pose_cw.inverse().transform(&pc)
                })
                .collect();
            let tri = [
                (pws[0], observe(&pose_cw, &pws[0])),
                (pws[1], observe(&pose_cw, &pws[1])),
                (pws[2], observe(&pose_cw, &pws[2])),
            ];
            let cands = p3p_solve(&tri);
            assert!(!cands.is_empty());
            // Disambiguate with the fourth point.
            let extra_pw = pws[3];
            let extra_b = observe(&pose_cw, &extra_pw);
            let best = cands
                .iter()
                .min_by(|x, y| {
                    let ex = (observe(x, &extra_pw) - extra_b).norm();
                    let ey = (observe(y, &extra_pw) - extra_b).norm();
                    ex.total_cmp(&ey)
                })
                .unwrap();
            let rot_err = (best.rotation().inverse() * pose_cw.rotation()).angle();
            let t_err = (best.translation() - pose_cw.translation()).norm();
            assert!(rot_err < 1e-9, "rotation error {rot_err}");
            assert!(t_err < 1e-9, "translation error {t_err}");
        }
    }

    #[test]
    fn ransac_with_30_percent_outliers() {
        let cam = CameraModel::pinhole(400.0, 400.0, 320.0, 240.0, 640, 480);
        let mut ok = 0;
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let pose_cw = random_pose(&mut rng);
            let mut points: Vec<WorldBearing> = (0..100)
                .map(|_| {
                    let pc = Vector3::new(
                        (rng.gen::<f64>() - 0.5) * 2.0,
                        (rng.gen::<f64>() - 0.5) * 2.0,
                        2.0 + rng.gen::<f64>() * 4.0,
                    );
                    let pw = pose_cw.inverse().transform(&pc);
                    (pw, observe(&pose_cw, &pw))
                })
                .collect();
            for p in points.iter_mut().take(30) {
                p.1 = Vector3::new((rng.gen::<f64>() - 0.5) * 1.2, (rng.gen::<f64>() - 0.5) * 1.0, 1.0);
            }
            let res = p3p_ransac(&points, &cam, 3.0, 0.99, 100, &mut rng).unwrap();
            let rot_err = (res.pose_cw.rotation().inverse() * pose_cw.rotation()).angle();
            if rot_err < 1e-3 {
                ok += 1;
            }
        }
        assert!(ok >= 99, "only {ok}/100 trials recovered the pose");
    }

    #[test]
    fn collinear_points_fail() {
        let dir = Vector3::new(0.3, -0.2, 0.1);
        let base = Vector3::new(0.0, 0.0, 4.0);
        let pws = [base, base + dir, base + dir * 2.0];
        let pose_cw = Se3::identity();
        let tri = [
            (pws[0], observe(&pose_cw, &pws[0])),
            (pws[1], observe(&pose_cw, &pws[1])),
            (pws[2], observe(&pose_cw, &pws[2])),
        ];
        assert!(p3p_solve(&tri).is_empty());
    }
}
