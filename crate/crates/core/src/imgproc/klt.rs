//! Coarse-to-fine inverse-compositional Lucas-Kanade point tracking.
//!
//! Translation-only warp over a 9x9 window. The template gradient and
//! Hessian are computed once per point per level; each iteration only
//! resamples the current image.

use nalgebra::{Matrix2, Vector2};

use super::pyramid::ImagePyramid;

#[derive(Debug, Clone, Copy)]
pub struct KltParams {
    pub window_half: i64,
    pub max_iterations: usize,
    pub convergence_px: f64,
    pub min_eigenvalue: f64,
}

impl Default for KltParams {
    fn default() -> Self {
        KltParams { window_half: 4, max_iterations: 30, convergence_px: 0.01, min_eigenvalue: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackFailure {
    OutOfImage,
    SingularHessian,
    NotConverged,
}

/// Track `prev_pt` from `prev` into `cur`, coarse-to-fine from
/// `first_level` down to `last_level`, starting at `initial_guess`
/// (level-0 coordinates). Returns the level-0 position in `cur`.
pub fn lk_track(
    prev: &ImagePyramid,
    cur: &ImagePyramid,
    prev_pt: &Vector2<f64>,
    initial_guess: &Vector2<f64>,
    first_level: usize,
    last_level: usize,
    params: &KltParams,
) -> Result<Vector2<f64>, TrackFailure> {
    assert!(first_level >= last_level);
    assert!(first_level < prev.num_levels());

    let mut guess = *initial_guess / (1 << first_level) as f64;
    for level in (last_level..=first_level).rev() {
        let scale = (1 << level) as f64;
        let entry_guess = guess;
        match track_level(prev, cur, &(*prev_pt / scale), guess, level, params) {
            Ok(refined) => guess = refined,
            // Coarse levels only improve the guess; a level that fails
            // (window out of image, aliased-flat texture, no convergence)
            // carries the guess down. Only the finest level is strict.
            Err(e) if level > last_level => {
                let _ = e;
                guess = entry_guess;
            }
            Err(e) => return Err(e),
        }
        if level > last_level {
            guess *= 2.0;
        }
    }
    Ok(guess * (1 << last_level) as f64)
}

fn track_level(
    prev: &ImagePyramid,
    cur: &ImagePyramid,
    center: &Vector2<f64>,
    mut guess: Vector2<f64>,
    level: usize,
    params: &KltParams,
) -> Result<Vector2<f64>, TrackFailure> {
    let win = params.window_half;
    let margin = win as f64 + 1.0;
    let tpl_img = prev.level(level);
    let cur_img = cur.level(level);
    if !tpl_img.contains(center, margin) {
        return Err(TrackFailure::OutOfImage);
    }

    // Template values, gradients and the fixed Hessian.
    let n = ((2 * win + 1) * (2 * win + 1)) as usize;
    let mut tpl = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    let mut h = Matrix2::<f64>::zeros();
    for dy in -win..=win {
        for dx in -win..=win {
            let sx = center.x + dx as f64;
            let sy = center.y + dy as f64;
            tpl.push(tpl_img.bilinear(sx, sy));
            let g = tpl_img.gradient(sx, sy);
            h += g * g.transpose();
            grads.push(g);
        }
    }
    let eigen = h.symmetric_eigenvalues();
    if eigen.min() < params.min_eigenvalue {
        return Err(TrackFailure::SingularHessian);
    }
    let h_inv = h.try_inverse().ok_or(TrackFailure::SingularHessian)?;

    for _ in 0..params.max_iterations {
        if !cur_img.contains(&guess, margin) {
            return Err(TrackFailure::OutOfImage);
        }
        let mut b = Vector2::<f64>::zeros();
        let mut idx = 0;
        for dy in -win..=win {
            for dx in -win..=win {
                let v = cur_img.bilinear(guess.x + dx as f64, guess.y + dy as f64);
                b += grads[idx] * (v - tpl[idx]);
                idx += 1;
            }
        }
        // Inverse-compositional translation update.
        let delta = h_inv * b;
        guess -= delta;
        if delta.norm() < params.convergence_px {
            return Ok(guess);
        }
    }
    Err(TrackFailure::NotConverged)
}
