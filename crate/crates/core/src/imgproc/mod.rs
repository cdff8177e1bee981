//! Image pre-processing, pyramids, feature detection, BRIEF description and
//! pyramidal inverse-compositional Lucas-Kanade tracking.

pub mod brief;
pub mod clahe;
pub mod detect;
pub mod image;
pub mod klt;
pub mod pyramid;

pub use brief::{compute_brief, BriefDescriptor, BriefExtractor, BRIEF_BITS};
pub use clahe::clahe;
pub use detect::{detect_grid, fast_score, refine_subpixel, DetectedCorner, DetectorKind};
pub use image::GrayImage;
pub use klt::{lk_track, KltParams, TrackFailure};
pub use pyramid::{ImagePyramid, PYRAMID_LEVELS};
