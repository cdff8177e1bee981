//! 256-bit BRIEF descriptors over a fixed random sampling pattern.
//!
//! The pattern is drawn once from a hard-coded seed so descriptors are
//! bit-exact across runs and builds; intensities come from a 7x7
//! box-smoothed image.

use std::sync::OnceLock;

use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::{box_mean, GrayImage};

pub const BRIEF_BITS: usize = 256;
const PATTERN_SEED: u64 = 0xb5_1ef_5eed;
const PATCH_HALF: i64 = 15; // 31x31 pattern window
const SMOOTH_RADIUS: i64 = 3; // 7x7 box

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BriefDescriptor(pub [u8; 32]);

impl BriefDescriptor {
    pub fn hamming(&self, other: &BriefDescriptor) -> u32 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}

fn pattern() -> &'static [(i8, i8, i8, i8); BRIEF_BITS] {
    static PATTERN: OnceLock<[(i8, i8, i8, i8); BRIEF_BITS]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let mut pat = [(0i8, 0i8, 0i8, 0i8); BRIEF_BITS];
        for p in pat.iter_mut() {
            *p = (
                rng.gen_range(-PATCH_HALF..=PATCH_HALF) as i8,
                rng.gen_range(-PATCH_HALF..=PATCH_HALF) as i8,
                rng.gen_range(-PATCH_HALF..=PATCH_HALF) as i8,
                rng.gen_range(-PATCH_HALF..=PATCH_HALF) as i8,
            );
        }
        pat
    })
}

/// Precomputed smoothing state so descriptor batches share one integral
/// image.
pub struct BriefExtractor<'a> {
    image: &'a GrayImage,
    integral: Vec<u64>,
}

impl<'a> BriefExtractor<'a> {
    pub fn new(image: &'a GrayImage) -> Self {
        BriefExtractor { image, integral: image.integral() }
    }

    fn smoothed(&self, x: i64, y: i64) -> f64 {
        let xc = x.clamp(0, self.image.width as i64 - 1);
        let yc = y.clamp(0, self.image.height as i64 - 1);
        box_mean(&self.integral, self.image.width, self.image.height, xc, yc, SMOOTH_RADIUS)
    }

    /// Descriptor at a (rounded) keypoint position; samples outside the
    /// image are clamped to the border.
    pub fn describe(&self, keypoint: &Vector2<f64>) -> BriefDescriptor {
        let cx = keypoint.x.round() as i64;
        let cy = keypoint.y.round() as i64;
        let mut bits = [0u8; 32];
        for (i, &(ax, ay, bx, by)) in pattern().iter().enumerate() {
            let va = self.smoothed(cx + ax as i64, cy + ay as i64);
            let vb = self.smoothed(cx + bx as i64, cy + by as i64);
            if va < vb {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        BriefDescriptor(bits)
    }
}

/// Convenience wrapper for a single descriptor.
pub fn compute_brief(image: &GrayImage, keypoint: &Vector2<f64>) -> BriefDescriptor {
    BriefExtractor::new(image).describe(keypoint)
}
