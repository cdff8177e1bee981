//! The shared SLAM map: keyframes, anchored inverse-depth landmarks, the
//! covisibility graph, and copy-on-write snapshots for the tracker.
//!
//! Landmarks are parameterized by their anchor keyframe, an undistorted
//! anchor pixel and one inverse depth; the cached world position always
//! satisfies `world = T_w_anchor * (pi_inv(anchor_px) / gamma)`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use nalgebra::{Vector2, Vector3};

use crate::config::Calibration;
use crate::geometry::Se3;
use crate::imgproc::{BriefDescriptor, GrayImage, ImagePyramid};

pub type KeyframeId = u64;
pub type PointId = u64;

/// Landmark with anchored inverse-depth parameterization. Two-dimensional
/// feature tracks live in `SlamMap::obs_2d` until they are triangulated.
#[derive(Debug, Clone)]
pub struct MapPoint {
    pub id: PointId,
    pub anchor_kf: KeyframeId,
    /// Undistorted pixel in the anchor keyframe.
    pub anchor_px: Vector2<f64>,
    /// Inverse depth along the anchor bearing, > 0.
    pub inv_depth: f64,
    /// Cached world position, consistent with the anchor parameterization.
    pub world: Vector3<f64>,
    pub descriptors: Vec<BriefDescriptor>,
    pub observers: BTreeSet<KeyframeId>,
}

impl MapPoint {
    pub fn min_descriptor_distance(&self, d: &BriefDescriptor) -> Option<u32> {
        self.descriptors.iter().map(|x| x.hamming(d)).min()
    }
}

#[derive(Debug, Clone)]
pub struct KfKeypoint {
    pub raw_px: Vector2<f64>,
    pub undist_px: Vector2<f64>,
    /// Normalized bearing of the undistorted pixel.
    pub bearing: Vector3<f64>,
    pub descriptor: Option<BriefDescriptor>,
    /// Landmark this keypoint observes (differs from the feature id after
    /// merges or local-map re-tracking).
    pub map_point: Option<PointId>,
    pub right_raw_px: Option<Vector2<f64>>,
    pub right_undist_px: Option<Vector2<f64>>,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub frame_id: u64,
    pub timestamp: f64,
    pub pose_wc: Se3,
    /// Keyed by feature id.
    pub keypoints: BTreeMap<u64, KfKeypoint>,
    /// Landmark id -> feature id observing it in this keyframe.
    pub obs_index: BTreeMap<PointId, u64>,
    pub pyramid: Arc<ImagePyramid>,
    pub right_image: Option<Arc<GrayImage>>,
    pub right_pyramid: Option<Arc<ImagePyramid>>,
}

impl Keyframe {
    pub fn pose_cw(&self) -> Se3 {
        self.pose_wc.inverse()
    }
}

/// Symmetric keyframe adjacency weighted by the number of commonly observed
/// landmarks (left-view observations only).
#[derive(Debug, Clone, Default)]
pub struct CovisibilityGraph {
    edges: BTreeMap<KeyframeId, BTreeMap<KeyframeId, u32>>,
}

impl CovisibilityGraph {
    pub fn increment(&mut self, a: KeyframeId, b: KeyframeId) {
        if a == b {
            return;
        }
        *self.edges.entry(a).or_default().entry(b).or_insert(0) += 1;
        *self.edges.entry(b).or_default().entry(a).or_insert(0) += 1;
    }

    pub fn decrement(&mut self, a: KeyframeId, b: KeyframeId) {
        if a == b {
            return;
        }
        for (x, y) in [(a, b), (b, a)] {
            if let Some(m) = self.edges.get_mut(&x) {
                if let Some(c) = m.get_mut(&y) {
                    *c = c.saturating_sub(1);
                    if *c == 0 {
                        m.remove(&y);
                    }
                }
            }
        }
    }

    pub fn neighbors(&self, kf: KeyframeId) -> impl Iterator<Item = (KeyframeId, u32)> + '_ {
        self.edges.get(&kf).into_iter().flat_map(|m| m.iter().map(|(&k, &v)| (k, v)))
    }

    pub fn count(&self, a: KeyframeId, b: KeyframeId) -> u32 {
        self.edges.get(&a).and_then(|m| m.get(&b)).copied().unwrap_or(0)
    }

    pub fn remove_keyframe(&mut self, kf: KeyframeId) {
        if let Some(m) = self.edges.remove(&kf) {
            for other in m.keys() {
                if let Some(om) = self.edges.get_mut(other) {
                    om.remove(&kf);
                }
            }
        }
    }
}

/// Per-landmark position table published to the tracker plus the bindings
/// and pose correction it needs to stay consistent with the map.
#[derive(Debug, Clone, Default)]
pub struct MapSnapshot {
    pub epoch: u64,
    pub positions: BTreeMap<PointId, Vector3<f64>>,
    pub rebinds: BTreeMap<u64, PointId>,
    /// Monotone counter plus the world-frame delta the tracker should apply
    /// to its pose estimate after a loop-closure correction.
    pub correction_epoch: u64,
    pub correction: Se3,
}

impl MapSnapshot {
    /// Resolve a feature id through merges to its landmark position.
    pub fn position_of(&self, feature_id: u64) -> Option<(PointId, Vector3<f64>)> {
        let pid = self.rebinds.get(&feature_id).copied().unwrap_or(feature_id);
        self.positions.get(&pid).map(|p| (pid, *p))
    }
}

#[derive(Debug)]
pub struct SlamMap {
    pub calib: Calibration,
    pub keyframes: BTreeMap<KeyframeId, Keyframe>,
    pub points: BTreeMap<PointId, MapPoint>,
    /// Pending monocular tracks: feature id -> keyframes observing it, in
    /// observation order.
    pub obs_2d: BTreeMap<u64, Vec<KeyframeId>>,
    pub covisibility: CovisibilityGraph,
    /// Feature id -> surviving landmark id, for merged landmarks.
    pub rebinds: BTreeMap<u64, PointId>,
    next_kf_id: KeyframeId,
    snapshot_epoch: u64,
    correction_epoch: u64,
    correction: Se3,
    /// Keyframes a loop-closure verification currently holds; filtering
    /// defers their removal.
    pub lc_pinned: BTreeSet<KeyframeId>,
}

impl SlamMap {
    pub fn new(calib: Calibration) -> Self {
        SlamMap {
            calib,
            keyframes: BTreeMap::new(),
            points: BTreeMap::new(),
            obs_2d: BTreeMap::new(),
            covisibility: CovisibilityGraph::default(),
            rebinds: BTreeMap::new(),
            next_kf_id: 0,
            snapshot_epoch: 0,
            correction_epoch: 0,
            correction: Se3::identity(),
            lc_pinned: BTreeSet::new(),
        }
    }

    pub fn allocate_kf_id(&mut self) -> KeyframeId {
        let id = self.next_kf_id;
        self.next_kf_id += 1;
        id
    }

    pub fn last_kf_id(&self) -> Option<KeyframeId> {
        self.keyframes.keys().next_back().copied()
    }

    pub fn resolve(&self, feature_id: u64) -> PointId {
        self.rebinds.get(&feature_id).copied().unwrap_or(feature_id)
    }

    /// Insert a fully built keyframe, wiring observations of existing
    /// landmarks and recording 2D tracks for later triangulation.
    pub fn insert_keyframe(&mut self, kf: Keyframe) {
        let kf_id = kf.id;
        let mut bound: Vec<(PointId, u64, Option<BriefDescriptor>)> = Vec::new();
        let mut pending: Vec<u64> = Vec::new();
        for (&fid, kp) in &kf.keypoints {
            match kp.map_point {
                Some(pid) => bound.push((pid, fid, kp.descriptor)),
                None => pending.push(fid),
            }
        }
        self.keyframes.insert(kf_id, kf);
        for (pid, fid, desc) in bound {
            self.add_observation_inner(kf_id, fid, pid, desc);
        }
        for fid in pending {
            self.obs_2d.entry(fid).or_default().push(kf_id);
        }
    }

    fn add_observation_inner(&mut self, kf_id: KeyframeId, feature_id: u64, pid: PointId, desc: Option<BriefDescriptor>) {
        let Some(point) = self.points.get_mut(&pid) else { return };
        if point.observers.contains(&kf_id) {
            // keep the keypoint binding consistent anyway
            if let Some(kf) = self.keyframes.get_mut(&kf_id) {
                kf.obs_index.insert(pid, feature_id);
            }
            return;
        }
        point.observers.insert(kf_id);
        if let Some(d) = desc {
            point.descriptors.push(d);
        }
        let observers: Vec<KeyframeId> = point.observers.iter().copied().collect();
        if let Some(kf) = self.keyframes.get_mut(&kf_id) {
            kf.obs_index.insert(pid, feature_id);
            if let Some(kp) = kf.keypoints.get_mut(&feature_id) {
                kp.map_point = Some(pid);
            }
        }
        for other in observers {
            if other != kf_id && self.keyframes.contains_key(&other) {
                self.covisibility.increment(kf_id, other);
            }
        }
    }

    /// Record that `kf_id` observes landmark `pid` through `feature_id`,
    /// capping the landmark descriptor set.
    pub fn add_observation(&mut self, kf_id: KeyframeId, feature_id: u64, pid: PointId, desc_cap: usize) {
        let desc = self
            .keyframes
            .get(&kf_id)
            .and_then(|kf| kf.keypoints.get(&feature_id))
            .and_then(|kp| kp.descriptor);
        self.add_observation_inner(kf_id, feature_id, pid, desc);
        if let Some(point) = self.points.get_mut(&pid) {
            let len = point.descriptors.len();
            if len > desc_cap {
                point.descriptors.drain(0..len - desc_cap);
            }
        }
    }

    /// Create a landmark anchored at `anchor_kf` with the given inverse
    /// depth; `observers` must all contain the feature.
    pub fn create_point(
        &mut self,
        feature_id: u64,
        anchor_kf: KeyframeId,
        inv_depth: f64,
        observers: &[KeyframeId],
    ) -> Option<PointId> {
        debug_assert!(inv_depth > 0.0);
        let anchor = self.keyframes.get(&anchor_kf)?;
        let kp = anchor.keypoints.get(&feature_id)?;
        let anchor_px = kp.undist_px;
        let bearing = kp.bearing;
        let world = anchor.pose_wc.transform(&(bearing / inv_depth));
        let mut descriptors = Vec::new();
        let mut obs = BTreeSet::new();
        for &okf in observers {
            if let Some(k) = self.keyframes.get(&okf) {
                if let Some(okp) = k.keypoints.get(&feature_id) {
                    obs.insert(okf);
                    if let Some(d) = okp.descriptor {
                        descriptors.push(d);
                    }
                }
            }
        }
        if !obs.contains(&anchor_kf) {
            return None;
        }
        let pid = feature_id;
        self.points.insert(
            pid,
            MapPoint { id: pid, anchor_kf, anchor_px, inv_depth, world, descriptors, observers: BTreeSet::new() },
        );
        // wire observations + covisibility
        let obs_vec: Vec<KeyframeId> = obs.iter().copied().collect();
        for &okf in &obs_vec {
            let desc = self
                .keyframes
                .get(&okf)
                .and_then(|kf| kf.keypoints.get(&feature_id))
                .and_then(|kp| kp.descriptor);
            self.add_observation_inner(okf, feature_id, pid, desc);
        }
        self.obs_2d.remove(&feature_id);
        Some(pid)
    }

    /// Recompute the cached world position from the anchor parameterization.
    pub fn refresh_world(&mut self, pid: PointId) {
        let Some(point) = self.points.get(&pid) else { return };
        let Some(anchor) = self.keyframes.get(&point.anchor_kf) else { return };
        let bearing = self.calib.left.unproject(&point.anchor_px);
        let world = anchor.pose_wc.transform(&(bearing / point.inv_depth));
        self.points.get_mut(&pid).unwrap().world = world;
    }

    /// World position via the anchor formula (for invariant checks).
    pub fn world_via_anchor(&self, point: &MapPoint) -> Option<Vector3<f64>> {
        let anchor = self.keyframes.get(&point.anchor_kf)?;
        let bearing = self.calib.left.unproject(&point.anchor_px);
        Some(anchor.pose_wc.transform(&(bearing / point.inv_depth)))
    }

    /// Re-anchor a landmark to a new keyframe keeping the world position
    /// bit-identical: the new anchor pixel is the projection of the cached
    /// world point, and gamma is its camera depth.
    pub fn re_anchor(&mut self, pid: PointId, new_anchor: KeyframeId) -> bool {
        let Some(point) = self.points.get(&pid) else { return false };
        let world = point.world;
        let Some(kf) = self.keyframes.get(&new_anchor) else { return false };
        let pc = kf.pose_cw().transform(&world);
        if pc.z <= 1e-9 {
            return false;
        }
        let Some(px) = self.calib.left.project(&pc) else { return false };
        let p = self.points.get_mut(&pid).unwrap();
        p.anchor_kf = new_anchor;
        p.anchor_px = px;
        p.inv_depth = 1.0 / pc.z;
        true
    }

    /// Remove one observation; landmarks losing their last observer are
    /// dropped, landmarks losing their anchor are re-anchored to the
    /// earliest remaining observer.
    pub fn remove_observation(&mut self, kf_id: KeyframeId, pid: PointId) {
        let Some(point) = self.points.get_mut(&pid) else { return };
        if !point.observers.remove(&kf_id) {
            return;
        }
        let remaining: Vec<KeyframeId> = point.observers.iter().copied().collect();
        let anchor = point.anchor_kf;
        if let Some(kf) = self.keyframes.get_mut(&kf_id) {
            if let Some(fid) = kf.obs_index.remove(&pid) {
                if let Some(kp) = kf.keypoints.get_mut(&fid) {
                    kp.map_point = None;
                }
            }
        }
        for other in &remaining {
            self.covisibility.decrement(kf_id, *other);
        }
        if remaining.is_empty() {
            self.points.remove(&pid);
            return;
        }
        if anchor == kf_id {
            let new_anchor = remaining[0];
            if !self.re_anchor(pid, new_anchor) {
                self.points.remove(&pid);
            }
        }
    }

    /// Merge landmark `drop_id` into `keep_id` (the older landmark keeps
    /// its anchor). Observer keyframes are re-bound.
    pub fn merge_points(&mut self, keep_id: PointId, drop_id: PointId, desc_cap: usize) {
        if keep_id == drop_id {
            return;
        }
        let Some(dropped) = self.points.remove(&drop_id) else { return };
        let (drop_observers, drop_descs) = (dropped.observers, dropped.descriptors);
        // detach covisibility contributed by the dropped landmark
        let obs_vec: Vec<KeyframeId> = drop_observers.iter().copied().collect();
        for i in 0..obs_vec.len() {
            for j in i + 1..obs_vec.len() {
                self.covisibility.decrement(obs_vec[i], obs_vec[j]);
            }
        }
        for &okf in &obs_vec {
            let fid = self.keyframes.get_mut(&okf).and_then(|kf| kf.obs_index.remove(&drop_id));
            if let Some(fid) = fid {
                if self.points.get(&keep_id).map_or(false, |p| p.observers.contains(&okf)) {
                    // keyframe already observes the kept landmark; this
                    // keypoint loses its binding
                    if let Some(kp) = self.keyframes.get_mut(&okf).and_then(|kf| kf.keypoints.get_mut(&fid)) {
                        kp.map_point = None;
                    }
                } else {
                    if let Some(kp) = self.keyframes.get_mut(&okf).and_then(|kf| kf.keypoints.get_mut(&fid)) {
                        kp.map_point = Some(keep_id);
                    }
                    self.add_observation_inner(okf, fid, keep_id, None);
                }
            }
        }
        if let Some(keep) = self.points.get_mut(&keep_id) {
            keep.descriptors.extend(drop_descs);
            let len = keep.descriptors.len();
            if len > desc_cap {
                keep.descriptors.drain(0..len - desc_cap);
            }
        }
        self.rebinds.insert(drop_id, keep_id);
        // collapse chains
        let stale: Vec<u64> = self.rebinds.iter().filter(|(_, &v)| v == drop_id).map(|(&k, _)| k).collect();
        for k in stale {
            self.rebinds.insert(k, keep_id);
        }
    }

    /// Remove a keyframe entirely; returns its final pose. Anchored
    /// landmarks move to their second observing keyframe first.
    pub fn remove_keyframe(&mut self, kf_id: KeyframeId) -> Option<Se3> {
        let kf = self.keyframes.get(&kf_id)?;
        let pose = kf.pose_wc;
        let observed: Vec<PointId> = kf.obs_index.keys().copied().collect();
        for pid in observed {
            self.remove_observation(kf_id, pid);
        }
        // drop pending 2D tracks that referenced this keyframe
        let mut dead_tracks = Vec::new();
        for (fid, obs) in self.obs_2d.iter_mut() {
            obs.retain(|&k| k != kf_id);
            if obs.is_empty() {
                dead_tracks.push(*fid);
            }
        }
        for fid in dead_tracks {
            self.obs_2d.remove(&fid);
        }
        self.covisibility.remove_keyframe(kf_id);
        self.keyframes.remove(&kf_id);
        Some(pose)
    }

    /// Record a world-frame pose correction so the tracker can follow a
    /// loop closure.
    pub fn push_correction(&mut self, delta: Se3) {
        self.correction_epoch += 1;
        self.correction = delta;
    }

    pub fn build_snapshot(&mut self) -> MapSnapshot {
        self.snapshot_epoch += 1;
        MapSnapshot {
            epoch: self.snapshot_epoch,
            positions: self.points.iter().map(|(&id, p)| (id, p.world)).collect(),
            rebinds: self.rebinds.clone(),
            correction_epoch: self.correction_epoch,
            correction: self.correction,
        }
    }

    /// Brute-force covisibility recomputation from observer sets, for
    /// integrity checks.
    pub fn brute_force_covisibility(&self) -> BTreeMap<(KeyframeId, KeyframeId), u32> {
        let mut counts: BTreeMap<(KeyframeId, KeyframeId), u32> = BTreeMap::new();
        for point in self.points.values() {
            let obs: Vec<KeyframeId> = point.observers.iter().copied().collect();
            for i in 0..obs.len() {
                for j in i + 1..obs.len() {
                    *counts.entry((obs[i], obs[j])).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    pub fn covisibility_consistent(&self) -> bool {
        let brute = self.brute_force_covisibility();
        for (&(a, b), &c) in &brute {
            if self.covisibility.count(a, b) != c {
                return false;
            }
        }
        // no extra edges
        for (&a, m) in &self.covisibility.edges {
            for (&b, &c) in m {
                if c > 0 {
                    let key = if a < b { (a, b) } else { (b, a) };
                    if brute.get(&key).copied().unwrap_or(0) != c {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Thread-shared map handle: an RwLock around the map plus an atomically
/// swapped snapshot so the tracker never waits on writers.
pub struct SharedMap {
    inner: RwLock<SlamMap>,
    snapshot: RwLock<Arc<MapSnapshot>>,
}

impl SharedMap {
    pub fn new(calib: Calibration) -> Self {
        SharedMap {
            inner: RwLock::new(SlamMap::new(calib)),
            snapshot: RwLock::new(Arc::new(MapSnapshot::default())),
        }
    }

    pub fn read(&self) -> std::sync::RwLockReadGuard<'_, SlamMap> {
        self.inner.read().unwrap()
    }

    pub fn write(&self) -> std::sync::RwLockWriteGuard<'_, SlamMap> {
        self.inner.write().unwrap()
    }

    /// Rebuild and swap the published snapshot.
    pub fn publish(&self) {
        let snap = Arc::new(self.inner.write().unwrap().build_snapshot());
        *self.snapshot.write().unwrap() = snap;
    }

    pub fn snapshot(&self) -> Arc<MapSnapshot> {
        self.snapshot.read().unwrap().clone()
    }
}
