//! Epipolar primitives: essential matrix construction and point-to-line
//! distances expressed in pixels.

use nalgebra::{Matrix3, Vector3};

use super::camera::CameraModel;
use super::se3::{skew, Se3};

/// Essential matrix for a relative transform `t_ba` mapping frame-a
/// coordinates into frame b, satisfying `x_b^T E x_a = 0`.
pub fn essential_from_pose(t_ba: &Se3) -> Matrix3<f64> {
    skew(&t_ba.translation()) * t_ba.rotation_matrix()
}

/// Distance in pixels from bearing_b to the epipolar line of bearing_a.
///
/// The line is `l = E x_a` on the normalized plane of camera b; the
/// normalized-plane distance is scaled by the focal length of `camera` to
/// express it in pixels.
pub fn epipolar_distance(
    essential: &Matrix3<f64>,
    bearing_a: &Vector3<f64>,
    bearing_b: &Vector3<f64>,
    camera: &CameraModel,
) -> f64 {
    let l = essential * bearing_a;
    let denom = (l.x * l.x + l.y * l.y).sqrt();
    if denom < 1e-15 {
        return 0.0;
    }
    camera.focal() * bearing_b.dot(&l).abs() / denom
}

/// Symmetric variant: the max of the two one-sided distances, each scaled by
/// its own camera's focal length.
pub fn epipolar_distance_sym(
    essential: &Matrix3<f64>,
    bearing_a: &Vector3<f64>,
    bearing_b: &Vector3<f64>,
    camera_a: &CameraModel,
    camera_b: &CameraModel,
) -> f64 {
    let d_b = epipolar_distance(essential, bearing_a, bearing_b, camera_b);
    let d_a = epipolar_distance(&essential.transpose(), bearing_b, bearing_a, camera_a);
    d_b.max(d_a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector2};

    fn cam() -> CameraModel {
        CameraModel::pinhole(400.0, 400.0, 320.0, 240.0, 640, 480)
    }

    fn setup() -> (Se3, Matrix3<f64>) {
        let q = UnitQuaternion::from_euler_angles(0.02, -0.6, 0.01);
        let t_ba = Se3::from_parts(q, Vector3::new(0.11, 0.02, 0.03));
        let e = essential_from_pose(&t_ba);
        (t_ba, e)
    }

    #[test]
    fn exact_correspondence_has_zero_distance() {
        let cam = cam();
        let (t_ba, e) = setup();
        let pw = Vector3::new(0.4, -0.1, 3.0);
        let pa = pw;
        let pb = t_ba.transform(&pw);
        let ba = pa / pa.z;
        let bb = pb / pb.z;
        assert!(epipolar_distance(&e, &ba, &bb, &cam) < 1e-10);
        assert!(epipolar_distance_sym(&e, &ba, &bb, &cam, &cam) < 1e-10);
    }

    #[test]
    fn perpendicular_perturbation_measures_in_pixels() {
        let cam = cam();
        let (t_ba, e) = setup();
        let pw = Vector3::new(0.2, 0.15, 2.5);
        let pa = pw;
        let pb = t_ba.transform(&pw);
        let ba = pa / pa.z;
        let bb = pb / pb.z;

        // Direction perpendicular to the epipolar line in b's pixel plane.
        let l = e * ba;
        let n = Vector2::new(l.x, l.y).normalize();
        let shift_px = 3.0;
        let bb_shifted = Vector3::new(bb.x + n.x * shift_px / cam.fx, bb.y + n.y * shift_px / cam.fy, 1.0);
        let d = epipolar_distance(&e, &ba, &bb_shifted, &cam);
        assert!((d - shift_px).abs() < 0.1, "expected ~3 px, got {d}");
        // The 2 px stereo-match filter rejects the perturbed match.
        assert!(d > 2.0);
    }
}
