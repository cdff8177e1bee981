//! Two-view linear triangulation with cheirality and parallax gating.

use nalgebra::{Matrix4, Vector3, Vector4};

use super::se3::Se3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TriangulationError {
    #[error("parallax below threshold")]
    LowParallax,
    #[error("point behind a camera")]
    Cheirality,
    #[error("linear system is rank deficient")]
    RankDeficient,
}

/// Triangulate a world point from two views.
///
/// `pose_a_cw`/`pose_b_cw` map world coordinates into each camera and the
/// bearings are normalized-plane coordinates `(x, y, 1)` from unprojection.
/// Uses the homogeneous two-view DLT, then rejects points behind either
/// camera or with ray parallax below `min_parallax_deg`.
pub fn triangulate(
    pose_a_cw: &Se3,
    pose_b_cw: &Se3,
    bearing_a: &Vector3<f64>,
    bearing_b: &Vector3<f64>,
    min_parallax_deg: f64,
) -> Result<Vector3<f64>, TriangulationError> {
    let mut a = Matrix4::zeros();
    for (row_base, (pose, bearing)) in [(pose_a_cw, bearing_a), (pose_b_cw, bearing_b)].iter().enumerate() {
        let r = pose.rotation_matrix();
        let t = pose.translation();
        // P = [R | t], rows p0..p2 as 4-vectors
        let p0 = Vector4::new(r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x);
        let p1 = Vector4::new(r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y);
        let p2 = Vector4::new(r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z);
        let xn = bearing.x / bearing.z;
        let yn = bearing.y / bearing.z;
        a.set_row(2 * row_base, &(xn * p2 - p0).transpose());
        a.set_row(2 * row_base + 1, &(yn * p2 - p1).transpose());
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(TriangulationError::RankDeficient)?;
    let h = v_t.row(3);
    if h[3].abs() < 1e-12 {
        return Err(TriangulationError::RankDeficient);
    }
    let pw = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let pa = pose_a_cw.transform(&pw);
    let pb = pose_b_cw.transform(&pw);
    if pa.z <= 1e-6 || pb.z <= 1e-6 {
        return Err(TriangulationError::Cheirality);
    }

    // Parallax between the two observation rays in the world frame.
    let ca = pose_a_cw.inverse().translation();
    let cb = pose_b_cw.inverse().translation();
    let ra = (pw - ca).normalize();
    let rb = (pw - cb).normalize();
    let cos = ra.dot(&rb).clamp(-1.0, 1.0);
    if cos.acos().to_degrees() < min_parallax_deg {
        return Err(TriangulationError::LowParallax);
    }

    Ok(pw)
}
