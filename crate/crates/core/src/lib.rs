//! Feature-based visual SLAM core: geometry, image processing, front-end
//! tracking, keyframe mapping, bundle adjustment and loop closing.

pub mod config;
pub mod geometry;
pub mod imgproc;
pub mod map;
pub mod solver;
pub mod rng;
