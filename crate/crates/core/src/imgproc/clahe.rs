//! Contrast-limited adaptive histogram equalization with bilinear blending
//! between tile mappings.

use super::image::GrayImage;

fn equalize_lut(hist: &[u32; 256], area: u32, clip_limit: f64) -> [u8; 256] {
    let mut h: [f64; 256] = [0.0; 256];
    for (i, &v) in hist.iter().enumerate() {
        h[i] = v as f64;
    }
    if clip_limit.is_finite() {
        // Clip bins at clip_limit times the mean bin height and spread the
        // excess uniformly.
        let limit = (clip_limit * area as f64 / 256.0).max(1.0);
        let mut excess = 0.0;
        for bin in h.iter_mut() {
            if *bin > limit {
                excess += *bin - limit;
                *bin = limit;
            }
        }
        let bonus = excess / 256.0;
        for bin in h.iter_mut() {
            *bin += bonus;
        }
    }
    let mut lut = [0u8; 256];
    let mut cdf = 0.0;
    for i in 0..256 {
        cdf += h[i];
        lut[i] = ((cdf * 255.0 / area as f64).round()).clamp(0.0, 255.0) as u8;
    }
    lut
}

/// CLAHE over `tile_grid` = (columns, rows) of tiles. Images too small to
/// give each tile a meaningful histogram fall back to plain global
/// equalization.
pub fn clahe(image: &GrayImage, clip_limit: f64, tile_grid: (u32, u32)) -> GrayImage {
    let (gx, gy) = tile_grid;
    let tile_w = image.width.div_ceil(gx.max(1));
    let tile_h = image.height.div_ceil(gy.max(1));
    if gx == 0 || gy == 0 || tile_w < 4 || tile_h < 4 {
        let mut hist = [0u32; 256];
        for &v in &image.data {
            hist[v as usize] += 1;
        }
        let lut = equalize_lut(&hist, image.width * image.height, f64::INFINITY);
        return GrayImage::from_data(image.width, image.height, image.data.iter().map(|&v| lut[v as usize]).collect());
    }

    // Per-tile lookup tables.
    let mut luts = vec![[0u8; 256]; (gx * gy) as usize];
    for ty in 0..gy {
        for tx in 0..gx {
            let x0 = tx * tile_w;
            let y0 = ty * tile_h;
            let x1 = (x0 + tile_w).min(image.width);
            let y1 = (y0 + tile_h).min(image.height);
            let mut hist = [0u32; 256];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[image.at(x, y) as usize] += 1;
                }
            }
            let area = (x1 - x0) * (y1 - y0);
            luts[(ty * gx + tx) as usize] = equalize_lut(&hist, area.max(1), clip_limit);
        }
    }

    // Blend the four surrounding tile mappings per pixel.
    let mut out = GrayImage::new(image.width, image.height);
    for y in 0..image.height {
        let fy = (y as f64 + 0.5) / tile_h as f64 - 0.5;
        let ty0 = fy.floor().clamp(0.0, (gy - 1) as f64) as u32;
        let ty1 = (ty0 + 1).min(gy - 1);
        let wy = (fy - fy.floor()).clamp(0.0, 1.0);
        let wy = if fy < 0.0 { 0.0 } else { wy };
        for x in 0..image.width {
            let fx = (x as f64 + 0.5) / tile_w as f64 - 0.5;
            let tx0 = fx.floor().clamp(0.0, (gx - 1) as f64) as u32;
            let tx1 = (tx0 + 1).min(gx - 1);
            let wx = (fx - fx.floor()).clamp(0.0, 1.0);
            let wx = if fx < 0.0 { 0.0 } else { wx };
            let v = image.at(x, y) as usize;
            let v00 = luts[(ty0 * gx + tx0) as usize][v] as f64;
            let v10 = luts[(ty0 * gx + tx1) as usize][v] as f64;
            let v01 = luts[(ty1 * gx + tx0) as usize][v] as f64;
            let v11 = luts[(ty1 * gx + tx1) as usize][v] as f64;
            let blended = v00 * (1.0 - wx) * (1.0 - wy) + v10 * wx * (1.0 - wy) + v01 * (1.0 - wx) * wy + v11 * wx * wy;
            out.set(x, y, blended.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(img: &GrayImage) -> f64 {
        let n = img.data.len() as f64;
        let mean = img.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        img.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
    }

    fn support(img: &GrayImage) -> usize {
        let mut seen = [false; 256];
        for &v in &img.data {
            seen[v as usize] = true;
        }
        let lo = seen.iter().position(|&s| s).unwrap();
        let hi = seen.iter().rposition(|&s| s).unwrap();
        hi - lo
    }

    #[test]
    fn constant_image_keeps_zero_variance() {
        let img = GrayImage::from_fn(64, 64, |_, _| 100);
        let out = clahe(&img, 3.0, (8, 8));
        assert_eq!(variance(&out), 0.0);
    }

    #[test]
    fn low_contrast_ramp_gains_support() {
        // values compressed into [100, 130]
        let img = GrayImage::from_fn(128, 128, |x, _| (100 + (x * 30) / 127) as u8);
        let out = clahe(&img, 3.0, (8, 8));
        assert!(support(&out) > support(&img), "support {} -> {}", support(&img), support(&out));
    }

    #[test]
    fn infinite_clip_matches_per_tile_equalization_at_tile_centers() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * 7 + y * 13) % 200) as u8 + 20);
        let out = clahe(&img, f64::INFINITY, (4, 4));
        let tile = 16u32;
        for ty in 0..4u32 {
            for tx in 0..4u32 {
                let mut hist = [0u32; 256];
                for y in ty * tile..(ty + 1) * tile {
                    for x in tx * tile..(tx + 1) * tile {
                        hist[img.at(x, y) as usize] += 1;
                    }
                }
                let lut = equalize_lut(&hist, tile * tile, f64::INFINITY);
                // tile center pixel carries weight 1 for its own mapping
                let cx = tx * tile + tile / 2;
                let cy = ty * tile + tile / 2;
                // center of tile (tx,ty) in blend coordinates: allow rounding
                let got = out.at(cx, cy) as i32;
                let want = lut[img.at(cx, cy) as usize] as i32;
                assert!((got - want).abs() <= 1, "tile ({tx},{ty}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn tiny_image_falls_back_to_global_equalization() {
        let img = GrayImage::from_fn(8, 8, |x, y| (60 + x + y) as u8);
        let out = clahe(&img, 3.0, (8, 8));
        assert_eq!(out.width, 8);
        assert!(variance(&out) > variance(&img));
    }
}
