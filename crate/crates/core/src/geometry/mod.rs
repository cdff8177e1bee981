//! Camera models, SE(3) algebra, projection, triangulation and the epipolar
//! / minimal-solver primitives used by every other module.

pub mod camera;
pub mod epipolar;
pub mod five_point;
pub mod p3p;
pub(crate) mod poly;
pub mod se3;
pub mod triangulate;

pub use camera::{CameraModel, Distortion, StereoRig};
pub use epipolar::{epipolar_distance, epipolar_distance_sym, essential_from_pose};
pub use five_point::{decompose_essential, essential_ransac, five_point_candidates, BearingPair};
pub use p3p::{p3p_ransac, p3p_solve, WorldBearing};
pub use se3::{Se3, Twist};
pub use triangulate::{triangulate, TriangulationError};
