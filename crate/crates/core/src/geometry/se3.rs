//! Rigid body transforms on SE(3) with exponential/logarithm maps and the
//! adjoint operators needed by the pose-graph and bundle-adjustment solvers.

use nalgebra::{Isometry3, Matrix3, Matrix4, Matrix6, Translation3, UnitQuaternion, Vector3, Vector6};

/// Rigid transform. Stored as a unit quaternion plus translation; rotation
/// matrices only appear at API boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3 {
    iso: Isometry3<f64>,
}

/// Twist coordinates are ordered `(rho, phi)`: translational part first,
/// rotational part last.
pub type Twist = Vector6<f64>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Default for Se3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3 {
    pub fn identity() -> Self {
        Se3 { iso: Isometry3::identity() }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Se3 { iso: Isometry3::from_parts(Translation3::from(translation), rotation) }
    }

    pub fn from_matrix3(rot: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_matrix(rot);
        Self::from_parts(q, translation)
    }

    /// Build from a 4x4 row-major homogeneous matrix (calibration files).
    pub fn from_matrix4(m: &Matrix4<f64>) -> Self {
        let rot = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        Self::from_matrix3(&rot, t)
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.iso.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.iso.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.iso.translation.vector
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        self.iso.to_homogeneous()
    }

    /// Composition `self * other`, renormalizing the quaternion so long
    /// chains stay orthonormal.
    pub fn compose(&self, other: &Se3) -> Se3 {
        let mut iso = self.iso * other.iso;
        iso.rotation = UnitQuaternion::new_normalize(iso.rotation.into_inner());
        Se3 { iso }
    }

    pub fn inverse(&self) -> Se3 {
        Se3 { iso: self.iso.inverse() }
    }

    /// Apply the transform to a point: `R p + t`.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation * p + self.iso.translation.vector
    }

    /// Rotate a direction without translating.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.iso.rotation * v
    }

    /// Exponential map from twist coordinates `(rho, phi)`.
    pub fn exp(xi: &Twist) -> Se3 {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let phi = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = phi.norm();
        let (rot, v) = if theta < 1e-10 {
            // Second-order series around zero.
            let phi_skew = skew(&phi);
            let rot = Matrix3::identity() + phi_skew + phi_skew * phi_skew * 0.5;
            let v = Matrix3::identity() + phi_skew * 0.5 + phi_skew * phi_skew / 6.0;
            (UnitQuaternion::from_matrix(&rot), v)
        } else {
            let axis = phi / theta;
            let q = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), theta);
            let k = skew(&axis);
            let v = Matrix3::identity()
                + k * ((1.0 - theta.cos()) / theta)
                + k * k * ((theta - theta.sin()) / theta);
            (q, v)
        };
        Se3::from_parts(rot, v * rho)
    }

    /// Logarithm map back to twist coordinates. Rotations with angle within
    /// 1e-3 of pi are at the edge of the chart; callers avoid them.
    pub fn log(&self) -> Twist {
        let q = self.iso.rotation;
        let (axis, theta) = match q.axis_angle() {
            Some((axis, angle)) => (axis.into_inner(), angle),
            None => (Vector3::x(), 0.0),
        };
        let phi = axis * theta;
        let v_inv = if theta < 1e-10 {
            let phi_skew = skew(&phi);
            Matrix3::identity() - phi_skew * 0.5 + phi_skew * phi_skew / 12.0
        } else {
            let k = skew(&axis);
            let half = theta * 0.5;
            let cot_half = half.cos() / half.sin();
            Matrix3::identity() - k * half + k * k * (1.0 - half * cot_half)
        };
        let rho = v_inv * self.iso.translation.vector;
        Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z)
    }

    /// Adjoint matrix mapping twists between frames: `Ad_T xi`.
    pub fn adjoint(&self) -> Matrix6<f64> {
        let r = self.rotation_matrix();
        let t_skew_r = skew(&self.translation()) * r;
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&t_skew_r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        ad
    }

    /// Deviation of `R^T R` from identity, for orthonormality checks.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rotation_matrix();
        (r.transpose() * r - Matrix3::identity()).norm()
    }
}

/// Little adjoint `ad_xi` of a twist `(rho, phi)`.
pub fn ad(xi: &Twist) -> Matrix6<f64> {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let mut m = Matrix6::zeros();
    let phi_skew = skew(&phi);
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&phi_skew);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&rho));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&phi_skew);
    m
}
