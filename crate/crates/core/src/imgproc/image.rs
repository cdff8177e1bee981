//! 8-bit grayscale image storage with bilinear sampling.

use nalgebra::Vector2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        GrayImage { width, height, data: vec![0; (width * height) as usize] }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        GrayImage { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.data[(y * self.width + x) as usize] = v;
    }

    #[inline]
    pub fn at_clamped(&self, x: i64, y: i64) -> u8 {
        let xc = x.clamp(0, self.width as i64 - 1) as u32;
        let yc = y.clamp(0, self.height as i64 - 1) as u32;
        self.at(xc, yc)
    }

    /// Bilinear sample; coordinates are clamped to the valid domain.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, self.width as f64 - 1.0);
        let yc = y.clamp(0.0, self.height as f64 - 1.0);
        let x0 = xc.floor();
        let y0 = yc.floor();
        let fx = xc - x0;
        let fy = yc - y0;
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let p00 = self.at_clamped(x0, y0) as f64;
        let p10 = self.at_clamped(x0 + 1, y0) as f64;
        let p01 = self.at_clamped(x0, y0 + 1) as f64;
        let p11 = self.at_clamped(x0 + 1, y0 + 1) as f64;
        p00 * (1.0 - fx) * (1.0 - fy) + p10 * fx * (1.0 - fy) + p01 * (1.0 - fx) * fy + p11 * fx * fy
    }

    /// Central-difference gradient of the bilinearly sampled intensity.
    pub fn gradient(&self, x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(
            0.5 * (self.bilinear(x + 1.0, y) - self.bilinear(x - 1.0, y)),
            0.5 * (self.bilinear(x, y + 1.0) - self.bilinear(x, y - 1.0)),
        )
    }

    pub fn contains(&self, px: &Vector2<f64>, margin: f64) -> bool {
        px.x >= margin
            && px.y >= margin
            && px.x <= self.width as f64 - 1.0 - margin
            && px.y <= self.height as f64 - 1.0 - margin
    }

    /// Summed-area table with one extra row/column of zeros.
    pub fn integral(&self) -> Vec<u64> {
        let w = self.width as usize + 1;
        let h = self.height as usize + 1;
        let mut out = vec![0u64; w * h];
        for y in 1..h {
            let mut row = 0u64;
            for x in 1..w {
                row += self.at(x as u32 - 1, y as u32 - 1) as u64;
                out[y * w + x] = out[(y - 1) * w + x] + row;
            }
        }
        out
    }
}

/// Mean over a clamped box window using an integral image from `integral()`.
pub fn box_mean(integral: &[u64], width: u32, height: u32, cx: i64, cy: i64, radius: i64) -> f64 {
    let w = width as i64;
    let h = height as i64;
    let x0 = (cx - radius).clamp(0, w - 1);
    let y0 = (cy - radius).clamp(0, h - 1);
    let x1 = (cx + radius).clamp(0, w - 1);
    let y1 = (cy + radius).clamp(0, h - 1);
    let stride = (width + 1) as usize;
    let idx = |x: i64, y: i64| -> u64 { integral[y as usize * stride + x as usize] };
    let sum = idx(x1 + 1, y1 + 1) + idx(x0, y0) - idx(x1 + 1, y0) - idx(x0, y1 + 1);
    let area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    sum as f64 / area
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_linearly() {
        let img = GrayImage::from_fn(4, 4, |x, _| (x * 10) as u8);
        assert!((img.bilinear(1.5, 2.0) - 15.0).abs() < 1e-12);
        assert!((img.bilinear(0.25, 0.75) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn integral_box_mean_matches_brute_force() {
        let img = GrayImage::from_fn(9, 7, |x, y| ((x * 31 + y * 17) % 251) as u8);
        let integral = img.integral();
        for cy in 0..7 {
            for cx in 0..9 {
                let mut sum = 0.0;
                let mut n = 0.0;
                let x0 = (cx as i64 - 2).clamp(0, 8);
                let x1 = (cx as i64 + 2).clamp(0, 8);
                let y0 = (cy as i64 - 2).clamp(0, 6);
                let y1 = (cy as i64 + 2).clamp(0, 6);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        sum += img.at(x as u32, y as u32) as f64;
                        n += 1.0;
                    }
                }
                let got = box_mean(&integral, 9, 7, cx as i64, cy as i64, 2);
                assert!((got - sum / n).abs() < 1e-9);
            }
        }
    }
}
