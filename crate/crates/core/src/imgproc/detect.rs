//! Grid-based corner detection: Shi-Tomasi (or FAST in the fast profile)
//! with per-cell maxima and iterative subpixel refinement.

use nalgebra::{Matrix2, Vector2};

use super::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    ShiTomasi,
    Fast,
}

#[derive(Debug, Clone, Copy)]
pub struct DetectedCorner {
    pub px: Vector2<f64>,
    pub score: f64,
}

const DETECT_MARGIN: u32 = 4;

/// Shi-Tomasi response: smallest eigenvalue of the 3x3-windowed structure
/// tensor of central-difference gradients.
fn shi_tomasi_response(img: &GrayImage) -> Vec<f64> {
    let w = img.width as usize;
    let h = img.height as usize;
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            gx[i] = 0.5 * (img.data[i + 1] as f64 - img.data[i - 1] as f64);
            gy[i] = 0.5 * (img.data[i + w] as f64 - img.data[i - w] as f64);
        }
    }
    let mut resp = vec![0.0f64; w * h];
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let mut a = 0.0;
            let mut b = 0.0;
            let mut c = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let i = (y as i64 + dy) as usize * w + (x as i64 + dx) as usize;
                    a += gx[i] * gx[i];
                    b += gx[i] * gy[i];
                    c += gy[i] * gy[i];
                }
            }
            resp[y * w + x] = 0.5 * (a + c - ((a - c) * (a - c) + 4.0 * b * b).sqrt());
        }
    }
    resp
}

const FAST_OFFSETS: [(i64, i64); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// FAST-9 segment-test score: 0 when not a corner, else the sum of absolute
/// differences beyond the threshold over the best contiguous arc.
pub fn fast_score(img: &GrayImage, x: u32, y: u32, threshold: f64) -> f64 {
    if x < 3 || y < 3 || x + 3 >= img.width || y + 3 >= img.height {
        return 0.0;
    }
    let p = img.at(x, y) as f64;
    let mut diff = [0.0f64; 16];
    for (i, (dx, dy)) in FAST_OFFSETS.iter().enumerate() {
        diff[i] = img.at((x as i64 + dx) as u32, (y as i64 + dy) as u32) as f64 - p;
    }
    let mut best = 0.0f64;
    for sign in [1.0, -1.0] {
        let mut run = 0usize;
        let mut run_sum = 0.0;
        // walk doubled circle to catch wrap-around arcs
        for i in 0..32 {
            let d = diff[i % 16] * sign;
            if d > threshold {
                run += 1;
                run_sum += d - threshold;
                if run >= 9 {
                    best = best.max(run_sum);
                }
                if run == 16 {
                    break;
                }
            } else {
                run = 0;
                run_sum = 0.0;
            }
        }
    }
    best
}

fn fast_response(img: &GrayImage, threshold: f64) -> Vec<f64> {
    let w = img.width as usize;
    let mut resp = vec![0.0f64; w * img.height as usize];
    for y in 3..img.height.saturating_sub(3) {
        for x in 3..img.width.saturating_sub(3) {
            resp[y as usize * w + x as usize] = fast_score(img, x, y, threshold);
        }
    }
    resp
}

/// Iterative gradient-weighted subpixel refinement on a 5x5 window: solves
/// `sum_i G_i (x_i - p) = 0` with `G_i` the gradient outer product, at most
/// `max_iters` rounds. Falls back to the integer position if it drifts.
pub fn refine_subpixel(img: &GrayImage, start: Vector2<f64>, max_iters: usize) -> Vector2<f64> {
    let mut p = start;
    for _ in 0..max_iters {
        if !img.contains(&p, 4.0) {
            return start;
        }
        let mut g_sum = Matrix2::<f64>::zeros();
        let mut gx_sum = Vector2::<f64>::zeros();
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let sx = p.x + dx as f64;
                let sy = p.y + dy as f64;
                let g = img.gradient(sx, sy);
                let gm = g * g.transpose();
                g_sum += gm;
                gx_sum += gm * Vector2::new(sx, sy);
            }
        }
        let next = match g_sum.try_inverse() {
            Some(inv) => inv * gx_sum,
            None => return start,
        };
        let step = next - p;
        if (next - start).norm() > 2.0 {
            return start;
        }
        p = next;
        if step.norm() < 0.01 {
            break;
        }
    }
    p
}

/// One corner per empty grid cell: the maximum response above the quality
/// floor, subpixel-refined. Cells containing an `occupied` position yield
/// nothing. Output order is row-major over cells.
pub fn detect_grid(
    image: &GrayImage,
    cell_size: u32,
    occupied: &[Vector2<f64>],
    kind: DetectorKind,
    quality_level: f64,
    fast_threshold: f64,
) -> Vec<DetectedCorner> {
    let resp = match kind {
        DetectorKind::ShiTomasi => shi_tomasi_response(image),
        DetectorKind::Fast => fast_response(image, fast_threshold),
    };
    let w = image.width as usize;
    let global_max = resp.iter().cloned().fold(0.0f64, f64::max);
    if global_max <= 0.0 {
        return vec![];
    }
    // FAST scores are already thresholded; the relative floor applies to
    // Shi-Tomasi responses.
    let floor = match kind {
        DetectorKind::ShiTomasi => quality_level * global_max,
        DetectorKind::Fast => 0.0,
    };

    let cells_x = image.width.div_ceil(cell_size);
    let cells_y = image.height.div_ceil(cell_size);
    let mut cell_occupied = vec![false; (cells_x * cells_y) as usize];
    for pos in occupied {
        let cx = (pos.x.max(0.0) as u32 / cell_size).min(cells_x - 1);
        let cy = (pos.y.max(0.0) as u32 / cell_size).min(cells_y - 1);
        cell_occupied[(cy * cells_x + cx) as usize] = true;
    }

    let mut out = Vec::new();
    for cy in 0..cells_y {
        for cx in 0..cells_x {
            if cell_occupied[(cy * cells_x + cx) as usize] {
                continue;
            }
            let x0 = (cx * cell_size).max(DETECT_MARGIN);
            let y0 = (cy * cell_size).max(DETECT_MARGIN);
            let x1 = ((cx + 1) * cell_size).min(image.width.saturating_sub(DETECT_MARGIN));
            let y1 = ((cy + 1) * cell_size).min(image.height.saturating_sub(DETECT_MARGIN));
            let mut best: Option<(f64, u32, u32)> = None;
            for y in y0..y1 {
                for x in x0..x1 {
                    let s = resp[y as usize * w + x as usize];
                    if s > floor {
                        let better = match best {
                            None => true,
                            Some((bs, bx, by)) => s > bs || (s == bs && (x, y) < (bx, by)),
                        };
                        if better {
                            best = Some((s, x, y));
                        }
                    }
                }
            }
            if let Some((score, x, y)) = best {
                let px = refine_subpixel(image, Vector2::new(x as f64, y as f64), 10);
                out.push(DetectedCorner { px, score });
            }
        }
    }
    out
}
