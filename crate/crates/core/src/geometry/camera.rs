//! Pinhole camera models with radial-tangential or fisheye distortion.
//!
//! Images are never rectified; raw (distorted) and undistorted pixel
//! coordinates coexist everywhere, so the model exposes both projection
//! variants plus the iterative undistortion that links them.

use nalgebra::{Vector2, Vector3};

use super::se3::Se3;

const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distortion {
    /// OpenCV-style radial-tangential: k1, k2, p1, p2.
    RadTan { k1: f64, k2: f64, p1: f64, p2: f64 },
    /// Kannala-Brandt equidistant fisheye: k1..k4.
    Fisheye { k1: f64, k2: f64, k3: f64, k4: f64 },
}

impl Distortion {
    pub fn none() -> Self {
        Distortion::RadTan { k1: 0.0, k2: 0.0, p1: 0.0, p2: 0.0 }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Distortion::RadTan { .. } => "radtan",
            Distortion::Fisheye { .. } => "fisheye",
        }
    }

    /// Map undistorted normalized coordinates to distorted ones.
    pub fn distort(&self, p: &Vector2<f64>) -> Vector2<f64> {
        match *self {
            Distortion::RadTan { k1, k2, p1, p2 } => {
                let (x, y) = (p.x, p.y);
                let r2 = x * x + y * y;
                let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
                let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
                let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
                Vector2::new(radial * x + dx, radial * y + dy)
            }
            Distortion::Fisheye { k1, k2, k3, k4 } => {
                let r = p.norm();
                if r < 1e-12 {
                    return *p;
                }
                let theta = r.atan();
                let t2 = theta * theta;
                let theta_d = theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))));
                *p * (theta_d / r)
            }
        }
    }

    /// Invert `distort` (fixed point for radtan, Newton on theta for
    /// fisheye). At most 20 iterations, tolerance 1e-10 in normalized units.
    pub fn undistort(&self, pd: &Vector2<f64>) -> Vector2<f64> {
        match *self {
            Distortion::RadTan { k1, k2, p1, p2 } => {
                let mut p = *pd;
                for _ in 0..20 {
                    let (x, y) = (p.x, p.y);
                    let r2 = x * x + y * y;
                    let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
                    let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
                    let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
                    let next = Vector2::new((pd.x - dx) / radial, (pd.y - dy) / radial);
                    let step = (next - p).norm();
                    p = next;
                    if step < 1e-10 {
                        break;
                    }
                }
                p
            }
            Distortion::Fisheye { k1, k2, k3, k4 } => {
                let rd = pd.norm();
                if rd < 1e-12 {
                    return *pd;
                }
                // Solve theta_d(theta) = rd by Newton.
                let mut theta = rd;
                for _ in 0..20 {
                    let t2 = theta * theta;
                    let f = theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))) - rd;
                    let df = 1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)));
                    let step = f / df;
                    theta -= step;
                    if step.abs() < 1e-12 {
                        break;
                    }
                }
                *pd * (theta.tan() / rd)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: Distortion,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, distortion: Distortion, width: u32, height: u32) -> Self {
        CameraModel { fx, fy, cx, cy, distortion, width, height }
    }

    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self::new(fx, fy, cx, cy, Distortion::none(), width, height)
    }

    /// Mean focal length, used to express normalized-plane distances in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Undistorted projection of a camera-frame point. `None` when the depth
    /// is at or below the minimum (behind the camera).
    pub fn project(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc.z <= MIN_DEPTH {
            return None;
        }
        let xn = pc.x / pc.z;
        let yn = pc.y / pc.z;
        Some(Vector2::new(self.fx * xn + self.cx, self.fy * yn + self.cy))
    }

    /// Distorted (raw) projection of a camera-frame point.
    pub fn project_distorted(&self, pc: &Vector3<f64>) -> Option<Vector2<f64>> {
        if pc.z <= MIN_DEPTH {
            return None;
        }
        let n = Vector2::new(pc.x / pc.z, pc.y / pc.z);
        let d = self.distortion.distort(&n);
        Some(Vector2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy))
    }

    /// Project a world point under `pose_cw` (world-to-camera).
    pub fn project_world(&self, pose_cw: &Se3, pw: &Vector3<f64>) -> Option<Vector2<f64>> {
        self.project(&pose_cw.transform(pw))
    }

    /// Bearing for an undistorted pixel: ((u-cx)/fx, (v-cy)/fy, 1).
    pub fn unproject(&self, undist_px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((undist_px.x - self.cx) / self.fx, (undist_px.y - self.cy) / self.fy, 1.0)
    }

    /// Undistorted pixel for a raw pixel.
    pub fn undistort_px(&self, raw_px: &Vector2<f64>) -> Vector2<f64> {
        let n = Vector2::new((raw_px.x - self.cx) / self.fx, (raw_px.y - self.cy) / self.fy);
        let u = self.distortion.undistort(&n);
        Vector2::new(self.fx * u.x + self.cx, self.fy * u.y + self.cy)
    }

    /// Raw pixel for an undistorted pixel.
    pub fn distort_px(&self, undist_px: &Vector2<f64>) -> Vector2<f64> {
        let n = Vector2::new((undist_px.x - self.cx) / self.fx, (undist_px.y - self.cy) / self.fy);
        let d = self.distortion.distort(&n);
        Vector2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    pub fn in_image(&self, px: &Vector2<f64>, margin: f64) -> bool {
        px.x >= margin
            && px.y >= margin
            && px.x <= self.width as f64 - 1.0 - margin
            && px.y <= self.height as f64 - 1.0 - margin
    }
}

/// Calibrated stereo pair. `t_rl` maps left-camera coordinates into the
/// right camera and is fixed for the lifetime of a run.
#[derive(Debug, Clone, Copy)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
    pub t_rl: Se3,
}

impl StereoRig {
    pub fn new(left: CameraModel, right: CameraModel, t_rl: Se3) -> Self {
        StereoRig { left, right, t_rl }
    }

    pub fn baseline(&self) -> f64 {
        self.t_rl.translation().norm()
    }
}
