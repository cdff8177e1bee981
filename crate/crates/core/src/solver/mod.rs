//! State optimization: robust local bundle adjustment and redundant
//! keyframe filtering.

pub mod ba;

use std::collections::BTreeSet;

use crate::config::SlamConfig;
use crate::geometry::Se3;
use crate::map::{KeyframeId, SharedMap, SlamMap};

pub use ba::{build_local_ba, solve_ba, BaObservation, BaPoint, BaProblem, BaSolution};

/// Run local BA around `kf_id` on a snapshot of the map, then commit the
/// result. Entities deleted while solving are skipped at commit.
pub fn run_local_ba(shared: &SharedMap, kf_id: KeyframeId, config: &SlamConfig) -> Option<BaSolution> {
    let problem = {
        let map = shared.read();
        if !map.keyframes.contains_key(&kf_id) {
            return None;
        }
        build_local_ba(&map, kf_id, config)
    };
    if problem.observations.is_empty() {
        return None;
    }
    let solution = solve_ba(&problem, config.ba_max_iters, config.huber_delta, config.chi2_threshold);
    let commit = !solution.diverged || solution.final_cost <= solution.initial_cost;
    if commit {
        let mut map = shared.write();
        commit_solution(&mut map, &problem, &solution, config);
    }
    shared.publish();
    Some(solution)
}

pub fn commit_solution(map: &mut SlamMap, problem: &BaProblem, solution: &BaSolution, _config: &SlamConfig) {
    for &kf_id in &problem.free_kfs {
        if Some(kf_id) == problem.gauge_kf {
            continue;
        }
        if let Some(kf) = map.keyframes.get_mut(&kf_id) {
            kf.pose_wc = solution.poses[&kf_id];
        }
    }
    let touched: Vec<_> = problem.points.keys().copied().collect();
    for pid in &touched {
        if let Some(point) = map.points.get_mut(pid) {
            if let Some(&d) = solution.depths.get(pid) {
                point.inv_depth = d;
            }
        }
    }
    // Anchors may have moved: refresh cached world positions.
    for pid in &touched {
        map.refresh_world(*pid);
    }
    for (kf, pid, right_only) in &solution.culled {
        if *right_only {
            if let Some(k) = map.keyframes.get_mut(kf) {
                if let Some(&fid) = k.obs_index.get(pid) {
                    if let Some(kp) = k.keypoints.get_mut(&fid) {
                        kp.right_raw_px = None;
                        kp.right_undist_px = None;
                    }
                }
            }
        } else if map.keyframes.contains_key(kf) && map.points.contains_key(pid) {
            map.remove_observation(*kf, *pid);
        }
    }
}

/// Remove redundant keyframes around `kf_id`: a covisible keyframe goes when
/// at least `kf_filter_ratio` of its observed landmarks have at least
/// `kf_filter_other_obs` other observers. Returns the removed ids with
/// their final poses so the caller can rebind trajectory entries.
pub fn filter_keyframes(map: &mut SlamMap, kf_id: KeyframeId, config: &SlamConfig) -> Vec<(KeyframeId, Se3)> {
    let newest = map.last_kf_id();
    let candidates: Vec<KeyframeId> = map
        .covisibility
        .neighbors(kf_id)
        .map(|(n, _)| n)
        .filter(|&n| n != kf_id && Some(n) != newest && n != 0)
        .collect();
    let mut removed = Vec::new();
    for n in candidates {
        if map.lc_pinned.contains(&n) {
            continue;
        }
        let Some(kf) = map.keyframes.get(&n) else { continue };
        let observed: Vec<_> = kf.obs_index.keys().copied().collect();
        if observed.is_empty() {
            continue;
        }
        let redundant = observed
            .iter()
            .filter(|pid| {
                map.points
                    .get(pid)
                    .map_or(false, |p| p.observers.iter().filter(|&&o| o != n).count() >= config.kf_filter_other_obs)
            })
            .count();
        if (redundant as f64) >= config.kf_filter_ratio * observed.len() as f64 {
            if let Some(pose) = map.remove_keyframe(n) {
                removed.push((n, pose));
            }
        }
    }
    removed
}

/// Keyframes whose removal is deferred because a loop-closure verification
/// holds them.
pub fn pin_keyframes(map: &mut SlamMap, kfs: impl IntoIterator<Item = KeyframeId>) {
    map.lc_pinned = kfs.into_iter().collect::<BTreeSet<_>>();
}

pub fn unpin_keyframes(map: &mut SlamMap) {
    map.lc_pinned.clear();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Calibration, Mode};
    use crate::geometry::CameraModel;
    use crate::imgproc::{GrayImage, ImagePyramid};
    use crate::map::{Keyframe, KfKeypoint, PointId};
    use nalgebra::{UnitQuaternion, Vector2, Vector3, Vector6};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn cam() -> CameraModel {
        CameraModel::pinhole(400.0, 400.0, 320.0, 240.0, 640, 480)
    }

    fn stereo_calib() -> Calibration {
        Calibration::stereo(cam(), cam(), Se3::from_parts(UnitQuaternion::identity(), Vector3::new(-0.11, 0.0, 0.0)))
    }

    /// Random scene with `n_kf` poses on an arc and `n_pts` points in front.
    fn synth_problem(
        seed: u64,
        n_kf: usize,
        n_pts: usize,
        stereo: bool,
    ) -> (ba::BaProblem, BTreeMap<KeyframeId, Se3>, BTreeMap<PointId, f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let camera = cam();
        let t_rl = Se3::from_parts(UnitQuaternion::identity(), Vector3::new(-0.11, 0.0, 0.0));

        let mut gt_poses = BTreeMap::new();
        for k in 0..n_kf {
            let angle = k as f64 * 0.03;
            let q = UnitQuaternion::from_euler_angles(0.0, angle * 0.5, 0.0);
            let t = Vector3::new(k as f64 * 0.2, (k as f64 * 0.08).sin() * 0.05, k as f64 * 0.02);
            gt_poses.insert(k as KeyframeId, Se3::from_parts(q, t));
        }
        let gt_points: Vec<Vector3<f64>> = (0..n_pts)
            .map(|_| {
                Vector3::new(
                    (rng.gen::<f64>() - 0.5) * 6.0 + n_kf as f64 * 0.1,
                    (rng.gen::<f64>() - 0.5) * 4.0,
                    4.0 + rng.gen::<f64>() * 6.0,
                )
            })
            .collect();

        let mut points = BTreeMap::new();
        let mut observations = Vec::new();
        let mut gt_depths = BTreeMap::new();
        for (pid, pw) in gt_points.iter().enumerate() {
            let pid = pid as PointId;
            // anchor at the first keyframe that sees it
            let mut anchor = None;
            for (&kf, pose) in &gt_poses {
                let pc = pose.inverse().transform(pw);
                if pc.z > 0.5 {
                    if camera.project(&pc).map_or(false, |px| camera.in_image(&px, 5.0)) {
                        anchor = Some((kf, pc.z));
                        break;
                    }
                }
            }
            let Some((anchor_kf, depth)) = anchor else { continue };
            let anchor_px = camera.project(&gt_poses[&anchor_kf].inverse().transform(pw)).unwrap();
            points.insert(
                pid,
                ba::BaPoint { anchor_kf, bearing: camera.unproject(&anchor_px), inv_depth: 1.0 / depth },
            );
            gt_depths.insert(pid, 1.0 / depth);
            for (&kf, pose) in &gt_poses {
                let pc = pose.inverse().transform(pw);
                if pc.z <= 0.5 {
                    continue;
                }
                let Some(px) = camera.project(&pc) else { continue };
                if !camera.in_image(&px, 5.0) {
                    continue;
                }
                let right_px = if stereo {
                    let pr = t_rl.transform(&pc);
                    camera.project(&pr)
                } else {
                    None
                };
                observations.push(ba::BaObservation { kf, point: pid, px, right_px });
            }
        }

        let free: Vec<KeyframeId> = gt_poses.keys().copied().collect();
        let problem = ba::BaProblem {
            gauge_kf: free.first().copied(),
            free_kfs: free,
            fixed_kfs: vec![],
            poses: gt_poses.clone(),
            points,
            fixed_depth: None,
            observations,
            left_cam: camera,
            right_cam: stereo.then_some(camera),
            t_rl: stereo.then_some(t_rl),
        };
        (problem, gt_poses, gt_depths)
    }

    #[test]
    fn ground_truth_state_is_a_fixed_point() {
        let (problem, _, _) = synth_problem(7, 4, 60, true);
        let sol = solve_ba(&problem, 20, 5.991f64.sqrt(), 5.991);
        assert!(sol.final_cost < 1e-18, "cost {}", sol.final_cost);
        assert!(sol.culled.is_empty());
        for (&kf, pose) in &sol.poses {
            let gt = &problem.poses[&kf];
            assert!((pose.to_matrix4() - gt.to_matrix4()).norm() < 1e-9);
        }
    }

    #[test]
    fn perturbed_states_recover_to_1e6() {
        let (mut problem, gt_poses, gt_depths) = synth_problem(8, 5, 80, true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // perturb free poses (not the gauge) by ~1 deg / 2 cm and depths by 5%
        for (&kf, pose) in problem.poses.iter_mut() {
            if Some(kf) == problem.gauge_kf {
                continue;
            }
            let xi = Vector6::from_fn(|i, _| {
                let s = if i < 3 { 0.02 } else { 0.017 };
                (rng.gen::<f64>() - 0.5) * s
            });
            *pose = pose.compose(&Se3::exp(&xi));
        }
        for p in problem.points.values_mut() {
            p.inv_depth *= 1.0 + (rng.gen::<f64>() - 0.5) * 0.1;
        }
        let sol = solve_ba(&problem, 30, 5.991f64.sqrt(), 5.991);
        assert!(!sol.diverged);
        for (&kf, pose) in &sol.poses {
            let gt = &gt_poses[&kf];
            let rot_err = (pose.rotation().inverse() * gt.rotation()).angle();
            let t_err = (pose.translation() - gt.translation()).norm();
            assert!(rot_err < 1e-6, "kf {kf} rotation error {rot_err}");
            assert!(t_err < 1e-6, "kf {kf} translation error {t_err}");
        }
        for (pid, &d) in &sol.depths {
            let gt = gt_depths[pid];
            assert!((d - gt).abs() / gt < 1e-6, "point {pid} depth error");
        }
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let (problem, _, _) = synth_problem(10, 4, 30, true);
        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for obs in problem.observations.iter().take(100) {
            let Some((j_obs, j_anchor, j_gamma, right)) = ba::analytic_jacobian(&problem, obs) else {
                continue;
            };
            let anchor_kf = problem.points[&obs.point].anchor_kf;
            // pose blocks
            for (kf, jan) in [(obs.kf, &j_obs), (anchor_kf, &j_anchor)] {
                if obs.kf == anchor_kf {
                    continue; // combined block tested implicitly via depth
                }
                for col in 0..6 {
                    let mut xi = Vector6::zeros();
                    xi[col] = h;
                    let (rp, rp_r) = ba::perturbed_residual(&problem, obs, Some((kf, xi)), None);
                    xi[col] = -h;
                    let (rm, rm_r) = ba::perturbed_residual(&problem, obs, Some((kf, xi)), None);
                    let fd = (rp - rm) / (2.0 * h);
                    for r_ in 0..2 {
                        let a = jan[(r_, col)];
                        let denom = a.abs().max(1.0);
                        max_rel = max_rel.max((a - fd[r_]).abs() / denom);
                    }
                    if let (Some((jr_obs, jr_anchor, _)), Some(rpr), Some(rmr)) = (right.as_ref(), rp_r, rm_r) {
                        let jr = if kf == obs.kf { jr_obs } else { jr_anchor };
                        let fdr = (rpr - rmr) / (2.0 * h);
                        for r_ in 0..2 {
                            let a = jr[(r_, col)];
                            let denom = a.abs().max(1.0);
                            max_rel = max_rel.max((a - fdr[r_]).abs() / denom);
                        }
                    }
                }
            }
            // depth block
            let (rp, rp_r) = ba::perturbed_residual(&problem, obs, None, Some((obs.point, h)));
            let (rm, rm_r) = ba::perturbed_residual(&problem, obs, None, Some((obs.point, -h)));
            let fd = (rp - rm) / (2.0 * h);
            for r_ in 0..2 {
                let denom = j_gamma[r_].abs().max(1.0);
                max_rel = max_rel.max((j_gamma[r_] - fd[r_]).abs() / denom);
            }
            if let (Some((_, _, jr_gamma)), Some(rpr), Some(rmr)) = (right.as_ref(), rp_r, rm_r) {
                let fdr = (rpr - rmr) / (2.0 * h);
                for r_ in 0..2 {
                    let denom = jr_gamma[r_].abs().max(1.0);
                    max_rel = max_rel.max((jr_gamma[r_] - fdr[r_]).abs() / denom);
                }
            }
        }
        assert!(max_rel < 1e-4, "max relative Jacobian error {max_rel}");
    }

    #[test]
    fn schur_matches_dense_solution() {
        let (problem, _, _) = synth_problem(11, 20, 200, false);
        let (b, e, c, v, w) = ba::assemble_normal_equations(&problem, 5.991f64.sqrt());
        let lam = 1e-5 * b.diagonal().max();
        let (dp_s, dd_s) = super::ba::dense_solve_reference(&b, &e, &c, &v, &w, lam).unwrap();
        // compare against the internal Schur path through a one-iteration solve
        let (dp_d, dd_d) = {
            // call the private path via a tiny reimplementation check:
            // dense reference vs schur_solve are both exposed
            super::ba::schur_solve_public(&b, &e, &c, &v, &w, lam).unwrap()
        };
        assert!((&dp_s - &dp_d).norm() < 1e-8 * (1.0 + dp_s.norm()), "pose step mismatch");
        assert!((&dd_s - &dd_d).norm() < 1e-8 * (1.0 + dd_s.norm()), "depth step mismatch");
    }

    #[test]
    fn planted_outliers_are_culled() {
        let (mut problem, _, _) = synth_problem(12, 4, 80, false);
        let n = problem.observations.len();
        let planted: Vec<usize> = (0..n).step_by(10).collect();
        for &i in &planted {
            problem.observations[i].px += Vector2::new(20.0, -15.0);
        }
        let sol = solve_ba(&problem, 30, 5.991f64.sqrt(), 5.991);
        let culled: std::collections::BTreeSet<(KeyframeId, PointId)> =
            sol.culled.iter().map(|(k, p, _)| (*k, *p)).collect();
        for &i in &planted {
            let o = &problem.observations[i];
            assert!(culled.contains(&(o.kf, o.point)), "outlier {i} survived");
        }
        assert_eq!(culled.len(), planted.len(), "clean observations were culled");
    }

    #[test]
    fn depth_perturbation_moves_point_along_anchor_ray() {
        let camera = cam();
        let anchor_pose = Se3::from_parts(UnitQuaternion::from_euler_angles(0.1, 0.2, -0.05), Vector3::new(1.0, -0.5, 0.3));
        let anchor_px = Vector2::new(350.0, 200.0);
        let bearing = camera.unproject(&anchor_px);
        let world_at = |gamma: f64| anchor_pose.transform(&(bearing / gamma));
        let w1 = world_at(0.25);
        let w2 = world_at(0.30);
        let ray = anchor_pose.rotate(&bearing).normalize();
        let diff = (w2 - w1).normalize();
        assert!((diff.cross(&ray)).norm() < 1e-9);
    }

    fn add_test_kf(map: &mut SlamMap, pose: Se3, feats: &[(u64, Vector2<f64>)], ts: f64) -> KeyframeId {
        let id = map.allocate_kf_id();
        let cam = map.calib.left;
        let pyr = Arc::new(ImagePyramid::build(GrayImage::new(8, 8), 1));
        let mut keypoints = BTreeMap::new();
        for &(fid, px) in feats {
            let resolved = map.resolve(fid);
            keypoints.insert(
                fid,
                KfKeypoint {
                    raw_px: px,
                    undist_px: px,
                    bearing: cam.unproject(&px),
                    descriptor: None,
                    map_point: map.points.contains_key(&resolved).then_some(resolved),
                    right_raw_px: None,
                    right_undist_px: None,
                },
            );
        }
        map.insert_keyframe(Keyframe {
            id,
            frame_id: id,
            timestamp: ts,
            pose_wc: pose,
            keypoints,
            obs_index: BTreeMap::new(),
            pyramid: pyr,
            right_image: None,
            right_pyramid: None,
        });
        id
    }

    /// Populate a map where consecutive keyframes share `shared` landmarks
    /// and nothing else.
    fn chain_map(n_kf: usize, shared: usize) -> (SlamMap, Vec<KeyframeId>) {
        let mut map = SlamMap::new(stereo_calib());
        let camera = map.calib.left;
        let mut kf_ids = Vec::new();
        let mut feature_id = 0u64;
        // features shared between kf i and i+1: ids [i*shared .. (i+1)*shared)
        for i in 0..n_kf {
            let pose = Se3::from_parts(UnitQuaternion::identity(), Vector3::new(i as f64 * 0.5, 0.0, 0.0));
            let mut feats = Vec::new();
            if i > 0 {
                // features of segment i-1 (shared with previous keyframe)
                for f in ((i - 1) * shared)..(i * shared) {
                    feats.push((f as u64, Vector2::new(100.0 + (f % shared) as f64 * 4.0, 200.0)));
                }
            }
            for f in (i * shared)..((i + 1) * shared) {
                feats.push((f as u64, Vector2::new(102.0 + (f % shared) as f64 * 4.0, 240.0)));
                feature_id = feature_id.max(f as u64);
            }
            kf_ids.push(add_test_kf(&mut map, pose, &feats, i as f64));
        }
        // triangulate each shared segment between its two observers
        for i in 0..n_kf - 1 {
            for f in (i * shared)..((i + 1) * shared) {
                let _pid = map.create_point(f as u64, kf_ids[i], 0.2, &[kf_ids[i], kf_ids[i + 1]]);
            }
        }
        // project real bearings so BA has consistent observations (not
        // needed for the structural tests here)
        (map, kf_ids)
    }

    #[test]
    fn local_ba_selection_follows_covisibility() {
        let config = SlamConfig { ba_min_shared_obs: 25, ..Default::default() };
        let (map, kf_ids) = chain_map(10, 30);
        let last = *kf_ids.last().unwrap();
        let problem = build_local_ba(&map, last, &config);
        assert_eq!(problem.free_kfs, vec![kf_ids[8], kf_ids[9]]);
        assert_eq!(problem.fixed_kfs, vec![kf_ids[7]]);
        assert_eq!(problem.gauge_kf, Some(kf_ids[8]));
    }

    #[test]
    fn neighbor_below_threshold_is_excluded() {
        let config = SlamConfig { ba_min_shared_obs: 25, ..Default::default() };
        let (map, kf_ids) = chain_map(3, 24);
        let problem = build_local_ba(&map, kf_ids[2], &config);
        assert_eq!(problem.free_kfs, vec![kf_ids[2]]);
        assert!(problem.fixed_kfs.contains(&kf_ids[1]));
    }

    #[test]
    fn first_two_keyframes_leave_one_free_pose() {
        let config = SlamConfig { ba_min_shared_obs: 25, mode: Mode::Mono, ..Default::default() };
        let (map, kf_ids) = chain_map(2, 30);
        let problem = build_local_ba(&map, kf_ids[1], &config);
        assert_eq!(problem.free_kfs.len(), 2);
        assert_eq!(problem.gauge_kf, Some(kf_ids[0]));
        assert!(problem.fixed_kfs.is_empty());
        // monocular without external anchors pins one depth
        assert!(problem.fixed_depth.is_some());
    }

    /// Six keyframes all observing the same landmarks: filtering removes at
    /// least one; a keyframe with unique observations is kept.
    #[test]
    fn redundant_keyframes_are_filtered() {
        let config = SlamConfig::default();
        let mut map = SlamMap::new(stereo_calib());
        let n_pts = 100usize;
        let feats: Vec<(u64, Vector2<f64>)> =
            (0..n_pts).map(|f| (f as u64, Vector2::new(50.0 + (f % 25) as f64 * 20.0, 60.0 + (f / 25) as f64 * 90.0))).collect();
        let mut kf_ids = Vec::new();
        for i in 0..6 {
            let pose = Se3::from_parts(UnitQuaternion::identity(), Vector3::new(i as f64 * 0.1, 0.0, 0.0));
            kf_ids.push(add_test_kf(&mut map, pose, &feats, i as f64));
        }
        let all: Vec<KeyframeId> = kf_ids.clone();
        for f in 0..n_pts {
            map.create_point(f as u64, kf_ids[0], 0.2, &all).unwrap();
        }
        let removed = filter_keyframes(&mut map, *kf_ids.last().unwrap(), &config);
        assert!(!removed.is_empty(), "expected at least one removal");
        // anchors were re-anchored; world positions preserved and graph sane
        assert!(map.covisibility_consistent());
        for p in map.points.values() {
            assert!(map.keyframes.contains_key(&p.anchor_kf));
            let via = map.world_via_anchor(p).unwrap();
            assert!((via - p.world).norm() < 1e-12);
        }
    }

    #[test]
    fn keyframe_with_unique_points_is_kept() {
        let config = SlamConfig::default();
        // 5 keyframes share 90 points, kf2 additionally has 10 unique ones
        // observed only by itself and kf3 (so ~10% unique -> kept only if
        // fewer than 95% of its points are redundant)
        let mut map = SlamMap::new(stereo_calib());
        let shared_feats: Vec<(u64, Vector2<f64>)> =
            (0..90).map(|f| (f as u64, Vector2::new(50.0 + (f % 30) as f64 * 15.0, 60.0 + (f / 30) as f64 * 100.0))).collect();
        let unique_feats: Vec<(u64, Vector2<f64>)> =
            (90..100).map(|f| (f as u64, Vector2::new(100.0 + (f - 90) as f64 * 30.0, 400.0))).collect();
        let mut kf_ids = Vec::new();
        for i in 0..5 {
            let mut feats = shared_feats.clone();
            if i == 2 || i == 3 {
                feats.extend(unique_feats.clone());
            }
            let pose = Se3::from_parts(UnitQuaternion::identity(), Vector3::new(i as f64 * 0.1, 0.0, 0.0));
            kf_ids.push(add_test_kf(&mut map, pose, &feats, i as f64));
        }
        for f in 0..90u64 {
            map.create_point(f, kf_ids[0], 0.2, &kf_ids).unwrap();
        }
        for f in 90..100u64 {
            map.create_point(f, kf_ids[2], 0.2, &[kf_ids[2], kf_ids[3]]).unwrap();
        }
        let removed = filter_keyframes(&mut map, kf_ids[4], &config);
        let removed_ids: Vec<KeyframeId> = removed.iter().map(|(id, _)| *id).collect();
        assert!(!removed_ids.contains(&kf_ids[2]), "keyframe with unique observations removed");
    }

    #[test]
    fn problem_dump_contains_states_and_observations() {
        let (problem, _, _) = synth_problem(13, 3, 10, true);
        let dump = problem.dump();
        assert!(dump.contains("ba_problem"));
        assert!(dump.lines().filter(|l| l.starts_with("pose ")).count() >= 3);
        assert!(dump.lines().any(|l| l.starts_with("obs ") && l.contains("stereo")));
    }
}
