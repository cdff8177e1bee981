//! Four-level image pyramids with scale factor 2.

use super::image::GrayImage;

pub const PYRAMID_LEVELS: usize = 4;

#[derive(Debug, Clone)]
pub struct ImagePyramid {
    pub levels: Vec<GrayImage>,
}

impl ImagePyramid {
    /// Build a pyramid; level 0 is the input itself, each next level halves
    /// the dimensions (`ceil(d / 2)`) with 2x2 box decimation.
    pub fn build(level0: GrayImage, num_levels: usize) -> Self {
        let mut levels = Vec::with_capacity(num_levels);
        levels.push(level0);
        for l in 1..num_levels {
            let prev = &levels[l - 1];
            let w = prev.width.div_ceil(2);
            let h = prev.height.div_ceil(2);
            let down = GrayImage::from_fn(w, h, |x, y| {
                let sx = 2 * x;
                let sy = 2 * y;
                let mut sum = 0u32;
                let mut n = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        if sx + dx < prev.width && sy + dy < prev.height {
                            sum += prev.at(sx + dx, sy + dy) as u32;
                            n += 1;
                        }
                    }
                }
                (sum / n) as u8
            });
            levels.push(down);
        }
        ImagePyramid { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &GrayImage {
        &self.levels[l]
    }

    pub fn level0(&self) -> &GrayImage {
        &self.levels[0]
    }
}
