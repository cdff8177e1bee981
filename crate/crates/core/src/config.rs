//! Run configuration: mode, profile and every tunable threshold, plus the
//! camera calibration. The pipeline crate parses these from flat
//! `key=value` files; defaults here are the reference settings.

use crate::geometry::{CameraModel, Se3, StereoRig};
use crate::imgproc::{DetectorKind, KltParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Mono,
    Stereo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Standard,
    Fast,
}

#[derive(Debug, Clone)]
pub struct SlamConfig {
    pub mode: Mode,
    pub profile: Profile,
    pub rt_mode: bool,
    pub seed: u64,
    pub lc_enabled: bool,

    // image processing
    pub clahe_clip: f64,
    pub clahe_tiles: (u32, u32),
    pub pyramid_levels: usize,
    pub cell_size: u32,
    pub detector: DetectorKind,
    pub shi_tomasi_quality: f64,
    pub fast_threshold: f64,
    pub klt: KltParams,
    pub backward_px: f64,
    pub border_margin: f64,

    // front-end
    pub ransac_em_threshold_px: f64,
    pub ransac_confidence: f64,
    pub ransac_em_max_iters: usize,
    pub p3p_threshold_px: f64,
    pub p3p_max_iters: usize,
    pub chi2_threshold: f64,
    pub pose_lm_iters: usize,
    pub kf_tracked_ratio: f64,
    pub kf_parallax_px: f64,
    pub min_keypoint_factor: f64,
    pub mono_init_min_matches: usize,
    pub mono_init_parallax_px: f64,
    pub min_parallax_deg: f64,
    pub relocalize_after: usize,

    // mapping
    pub stereo_epipolar_px: f64,
    pub retrack_radius_px: f64,
    pub desc_dist_max: u32,
    pub desc_cap: usize,

    // state optimization
    pub ba_min_shared_obs: usize,
    pub ba_max_iters: usize,
    pub kf_filter_ratio: f64,
    pub kf_filter_other_obs: usize,
    pub huber_delta: f64,

    // loop closing
    pub lc_temporal_mask: usize,
    pub lc_branch: usize,
    pub lc_leaf_split: usize,
    pub lc_ratio_test: f64,
    pub lc_min_inliers: usize,
    pub lc_rel_score: f64,
    pub lc_extra_features: usize,
    pub lc_proj_radius_px: f64,

    // fault injection for real-time contract tests (milliseconds)
    pub inject_mapping_delay_ms: u64,
    pub inject_ba_delay_ms: u64,
    pub inject_lc_delay_ms: u64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        SlamConfig {
            mode: Mode::Stereo,
            profile: Profile::Standard,
            rt_mode: false,
            seed: 1,
            lc_enabled: true,
            clahe_clip: 3.0,
            clahe_tiles: (8, 8),
            pyramid_levels: 4,
            cell_size: 35,
            detector: DetectorKind::ShiTomasi,
            shi_tomasi_quality: 0.01,
            fast_threshold: 20.0,
            klt: KltParams::default(),
            backward_px: 0.5,
            border_margin: 4.0,
            ransac_em_threshold_px: 3.0,
            ransac_confidence: 0.99,
            ransac_em_max_iters: 200,
            p3p_threshold_px: 3.0,
            p3p_max_iters: 100,
            chi2_threshold: 5.991,
            pose_lm_iters: 10,
            kf_tracked_ratio: 0.85,
            kf_parallax_px: 15.0,
            min_keypoint_factor: 0.5,
            mono_init_min_matches: 50,
            mono_init_parallax_px: 25.0,
            min_parallax_deg: 1.0,
            relocalize_after: 3,
            stereo_epipolar_px: 2.0,
            retrack_radius_px: 2.0,
            desc_dist_max: 50,
            desc_cap: 10,
            ba_min_shared_obs: 25,
            ba_max_iters: 20,
            kf_filter_ratio: 0.95,
            kf_filter_other_obs: 4,
            huber_delta: 5.991f64.sqrt(),
            lc_temporal_mask: 20,
            lc_branch: 10,
            lc_leaf_split: 150,
            lc_ratio_test: 0.8,
            lc_min_inliers: 30,
            lc_rel_score: 0.3,
            lc_extra_features: 300,
            lc_proj_radius_px: 3.0,
            inject_mapping_delay_ms: 0,
            inject_ba_delay_ms: 0,
            inject_lc_delay_ms: 0,
        }
    }
}

impl SlamConfig {
    /// The fast profile implies: loop closing off, FAST detector, 50 px
    /// cells. Applied here so the invariant cannot be violated by partial
    /// configs.
    pub fn apply_profile(&mut self) {
        if self.profile == Profile::Fast {
            self.lc_enabled = false;
            self.detector = DetectorKind::Fast;
            self.cell_size = 50;
        }
    }

    pub fn fast() -> Self {
        let mut c = SlamConfig { profile: Profile::Fast, ..Default::default() };
        c.apply_profile();
        c
    }
}

/// Calibrated camera setup for a run.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub left: CameraModel,
    pub right: Option<CameraModel>,
    pub t_rl: Option<Se3>,
}

impl Calibration {
    pub fn mono(left: CameraModel) -> Self {
        Calibration { left, right: None, t_rl: None }
    }

    pub fn stereo(left: CameraModel, right: CameraModel, t_rl: Se3) -> Self {
        Calibration { left, right: Some(right), t_rl: Some(t_rl) }
    }

    pub fn rig(&self) -> Option<StereoRig> {
        match (&self.right, &self.t_rl) {
            (Some(right), Some(t_rl)) => Some(StereoRig::new(self.left, *right, *t_rl)),
            _ => None,
        }
    }
}
