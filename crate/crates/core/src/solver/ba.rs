//! Local bundle adjustment over anchored inverse-depth landmarks.
//!
//! Poses update right-multiplicatively on SE(3); each landmark contributes a
//! single inverse-depth scalar, so the point block of the normal equations
//! is diagonal and is eliminated by a Schur complement.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2x6, Matrix3, Vector2, Vector3, Vector6};

use crate::config::{Mode, SlamConfig};
use crate::geometry::se3::skew;
use crate::geometry::{CameraModel, Se3};
use crate::map::{KeyframeId, PointId, SlamMap};

#[derive(Debug, Clone)]
pub struct BaObservation {
    pub kf: KeyframeId,
    pub point: PointId,
    /// Undistorted left-image observation.
    pub px: Vector2<f64>,
    /// Undistorted right-image observation; present iff the stereo term
    /// participates (the paper's beta flag).
    pub right_px: Option<Vector2<f64>>,
}

#[derive(Debug, Clone)]
pub struct BaPoint {
    pub anchor_kf: KeyframeId,
    /// Normalized bearing of the anchor pixel.
    pub bearing: Vector3<f64>,
    pub inv_depth: f64,
}

#[derive(Debug, Clone)]
pub struct BaProblem {
    /// Keyframes whose poses move, sorted ascending. The gauge keyframe is
    /// listed here but held constant during the solve.
    pub free_kfs: Vec<KeyframeId>,
    pub gauge_kf: Option<KeyframeId>,
    /// Covisibility-selected observers kept constant for conditioning.
    pub fixed_kfs: Vec<KeyframeId>,
    /// T_wc for every keyframe in the problem.
    pub poses: BTreeMap<KeyframeId, Se3>,
    pub points: BTreeMap<PointId, BaPoint>,
    /// Inverse depth pinned to fix monocular scale, when no fixed keyframe
    /// provides one.
    pub fixed_depth: Option<PointId>,
    pub observations: Vec<BaObservation>,
    pub left_cam: CameraModel,
    pub right_cam: Option<CameraModel>,
    pub t_rl: Option<Se3>,
}

impl BaProblem {
    /// Plain-text dump (initial states + observations) for offline
    /// regression of solver behavior.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ba_problem free={} fixed={} points={} obs={}", self.free_kfs.len(), self.fixed_kfs.len(), self.points.len(), self.observations.len());
        for (id, pose) in &self.poses {
            let kind = if self.free_kfs.contains(id) && Some(*id) != self.gauge_kf { "free" } else { "fixed" };
            let t = pose.translation();
            let q = pose.rotation();
            let _ = writeln!(s, "pose {id} {kind} {} {} {} {} {} {} {}", t.x, t.y, t.z, q.i, q.j, q.k, q.w);
        }
        for (id, p) in &self.points {
            let _ = writeln!(s, "point {id} anchor={} gamma={} bearing {} {} {}", p.anchor_kf, p.inv_depth, p.bearing.x, p.bearing.y, p.bearing.z);
        }
        for o in &self.observations {
            match o.right_px {
                Some(r) => {
                    let _ = writeln!(s, "obs {} {} {} {} stereo {} {}", o.kf, o.point, o.px.x, o.px.y, r.x, r.y);
                }
                None => {
                    let _ = writeln!(s, "obs {} {} {} {}", o.kf, o.point, o.px.x, o.px.y);
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct BaSolution {
    pub poses: BTreeMap<KeyframeId, Se3>,
    pub depths: BTreeMap<PointId, f64>,
    /// Observations whose residual failed the chi-square bound after
    /// convergence: (kf, point, right_only).
    pub culled: Vec<(KeyframeId, PointId, bool)>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub diverged: bool,
}

struct State {
    poses: BTreeMap<KeyframeId, Se3>,
    depths: BTreeMap<PointId, f64>,
}

fn huber_cost(e: f64, delta: f64) -> f64 {
    if e <= delta {
        e * e
    } else {
        delta * (2.0 * e - delta)
    }
}

fn dpi_dp(cam: &CameraModel, p: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    nalgebra::Matrix2x3::new(cam.fx * iz, 0.0, -cam.fx * p.x * iz * iz, 0.0, cam.fy * iz, -cam.fy * p.y * iz * iz)
}

/// Solve the problem with Levenberg-Marquardt; the normal equations are
/// reduced by eliminating the diagonal inverse-depth block.
pub fn solve_ba(problem: &BaProblem, max_iters: usize, huber_delta: f64, chi2: f64) -> BaSolution {
    let free_poses: Vec<KeyframeId> = problem.free_kfs.iter().copied().filter(|k| Some(*k) != problem.gauge_kf).collect();
    let pose_idx: BTreeMap<KeyframeId, usize> = free_poses.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let free_depths: Vec<PointId> =
        problem.points.keys().copied().filter(|p| Some(*p) != problem.fixed_depth).collect();
    let depth_idx: BTreeMap<PointId, usize> = free_depths.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let np = free_poses.len() * 6;
    let nd = free_depths.len();

    let mut state = State {
        poses: problem.poses.clone(),
        depths: problem.points.iter().map(|(&id, p)| (id, p.inv_depth)).collect(),
    };

    let eval_cost = |st: &State| -> f64 {
        let mut cost = 0.0;
        for obs in &problem.observations {
            let (r_left, r_right) = residuals(problem, st, obs);
            cost += huber_cost(r_left.norm(), huber_delta);
            if let Some(rr) = r_right {
                cost += huber_cost(rr.norm(), huber_delta);
            }
        }
        cost
    };

    let initial_cost = eval_cost(&state);
    let mut cost = initial_cost;
    let mut lambda: Option<f64> = None;
    let mut iterations = 0;
    let mut accepted_any = false;
    let mut consecutive_rejects = 0;

    for _ in 0..max_iters {
        iterations += 1;
        // Assemble damped normal equations in Schur form.
        let mut b = DMatrix::<f64>::zeros(np, np);
        let mut e = DMatrix::<f64>::zeros(np, nd);
        let mut c = DVector::<f64>::zeros(nd);
        let mut v = DVector::<f64>::zeros(np);
        let mut w = DVector::<f64>::zeros(nd);
        let mut max_diag = 0.0f64;

        for obs in &problem.observations {
            accumulate(problem, &state, obs, huber_delta, &pose_idx, &depth_idx, &mut b, &mut e, &mut c, &mut v, &mut w);
        }
        for i in 0..np {
            max_diag = max_diag.max(b[(i, i)]);
        }
        for i in 0..nd {
            max_diag = max_diag.max(c[i]);
        }
        let lam = *lambda.get_or_insert(1e-4 * max_diag.max(1e-12));

        let (delta_p, delta_d) = match schur_solve(&b, &e, &c, &v, &w, lam) {
            Some(d) => d,
            None => break,
        };

        // Candidate state.
        let mut cand = State { poses: state.poses.clone(), depths: state.depths.clone() };
        for (kf, &i) in &pose_idx {
            let xi = Vector6::from_fn(|r, _| delta_p[i * 6 + r]);
            let pose = cand.poses.get_mut(kf).unwrap();
            *pose = pose.compose(&Se3::exp(&xi));
        }
        let mut depth_ok = true;
        for (pid, &i) in &depth_idx {
            let d = cand.depths.get_mut(pid).unwrap();
            *d += delta_d[i];
            if *d <= 1e-9 {
                depth_ok = false;
            }
        }

        let new_cost = if depth_ok { eval_cost(&cand) } else { f64::INFINITY };
        if new_cost < cost {
            state = cand;
            cost = new_cost;
            lambda = Some(lam / 3.0);
            accepted_any = true;
            consecutive_rejects = 0;
            let step = delta_p.norm() + delta_d.norm();
            if step < 1e-10 {
                break;
            }
        } else {
            lambda = Some(lam * 10.0);
            consecutive_rejects += 1;
            if consecutive_rejects >= 5 || lam > 1e12 {
                break;
            }
        }
    }

    // Chi-square cull on converged states.
    let mut culled = Vec::new();
    for obs in &problem.observations {
        let (r_left, r_right) = residuals(problem, &state, obs);
        if r_left.norm_squared() > chi2 {
            culled.push((obs.kf, obs.point, false));
        } else if let Some(rr) = r_right {
            if rr.norm_squared() > chi2 {
                culled.push((obs.kf, obs.point, true));
            }
        }
    }

    BaSolution {
        poses: state.poses,
        depths: state.depths,
        culled,
        initial_cost,
        final_cost: cost,
        iterations,
        diverged: !accepted_any && initial_cost > 1e-12,
    }
}

fn residuals(problem: &BaProblem, st: &State, obs: &BaObservation) -> (Vector2<f64>, Option<Vector2<f64>>) {
    let point = &problem.points[&obs.point];
    let gamma = st.depths[&obs.point];
    let lambda_anchor = point.bearing / gamma;
    let t_w_anchor = &st.poses[&point.anchor_kf];
    let lambda_w = t_w_anchor.transform(&lambda_anchor);
    let t_wj = &st.poses[&obs.kf];
    let p_c = t_wj.inverse().transform(&lambda_w);
    let r_left = if p_c.z > 1e-6 {
        match problem.left_cam.project(&p_c) {
            Some(px) => obs.px - px,
            None => Vector2::zeros(),
        }
    } else {
        Vector2::zeros()
    };
    let r_right = match (&obs.right_px, &problem.right_cam, &problem.t_rl) {
        (Some(rpx), Some(rcam), Some(t_rl)) => {
            let p_r = t_rl.transform(&p_c);
            if p_r.z > 1e-6 {
                rcam.project(&p_r).map(|px| rpx - px)
            } else {
                Some(Vector2::zeros())
            }
        }
        _ => None,
    };
    (r_left, r_right)
}

/// Analytic Jacobians of one observation wrt (observer pose, anchor pose,
/// inverse depth), all as right-multiplicative SE(3) increments.
struct ObsJacobian {
    r_left: Vector2<f64>,
    j_obs: Matrix2x6<f64>,
    j_anchor: Matrix2x6<f64>,
    j_gamma: Vector2<f64>,
    right: Option<(Vector2<f64>, Matrix2x6<f64>, Matrix2x6<f64>, Vector2<f64>)>,
    valid: bool,
}

fn jacobians(problem: &BaProblem, st: &State, obs: &BaObservation) -> ObsJacobian {
    let point = &problem.points[&obs.point];
    let gamma = st.depths[&obs.point];
    let lambda_anchor = point.bearing / gamma;
    let t_w_anchor = &st.poses[&point.anchor_kf];
    let lambda_w = t_w_anchor.transform(&lambda_anchor);
    let t_wj = &st.poses[&obs.kf];
    let t_jw = t_wj.inverse();
    let p_c = t_jw.transform(&lambda_w);

    let mut out = ObsJacobian {
        r_left: Vector2::zeros(),
        j_obs: Matrix2x6::zeros(),
        j_anchor: Matrix2x6::zeros(),
        j_gamma: Vector2::zeros(),
        right: None,
        valid: false,
    };
    if p_c.z <= 1e-6 {
        return out;
    }
    let Some(px) = problem.left_cam.project(&p_c) else { return out };
    out.valid = true;
    out.r_left = obs.px - px;

    let r_jw = t_jw.rotation_matrix();
    let r_anchor = t_w_anchor.rotation_matrix();

    // d p_c / d xi_obs = [-I | [p_c]x]
    let mut dp_dobs = nalgebra::Matrix3x6::<f64>::zeros();
    dp_dobs.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Matrix3::identity()));
    dp_dobs.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&p_c));
    // d p_c / d xi_anchor = R_jw [R_a | -R_a [lambda_a]x]
    let mut dp_danchor = nalgebra::Matrix3x6::<f64>::zeros();
    dp_danchor.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r_jw * r_anchor));
    dp_danchor.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r_jw * r_anchor * skew(&lambda_anchor)));
    // d p_c / d gamma = R_jw R_a (-bearing / gamma^2)
    let dp_dgamma = r_jw * r_anchor * (-point.bearing / (gamma * gamma));

    let jpi = dpi_dp(&problem.left_cam, &p_c);
    out.j_obs = -jpi * dp_dobs;
    out.j_anchor = -jpi * dp_danchor;
    out.j_gamma = -jpi * dp_dgamma;

    if let (Some(rpx), Some(rcam), Some(t_rl)) = (&obs.right_px, &problem.right_cam, &problem.t_rl) {
        let p_r = t_rl.transform(&p_c);
        if p_r.z > 1e-6 {
            if let Some(ppx) = rcam.project(&p_r) {
                let r_rl = t_rl.rotation_matrix();
                let jpi_r = dpi_dp(rcam, &p_r);
                let jr_obs = -jpi_r * (r_rl * dp_dobs);
                let jr_anchor = -jpi_r * (r_rl * dp_danchor);
                let jr_gamma = -jpi_r * (r_rl * dp_dgamma);
                out.right = Some((rpx - ppx, jr_obs, jr_anchor, jr_gamma));
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    problem: &BaProblem,
    st: &State,
    obs: &BaObservation,
    huber_delta: f64,
    pose_idx: &BTreeMap<KeyframeId, usize>,
    depth_idx: &BTreeMap<PointId, usize>,
    b: &mut DMatrix<f64>,
    e: &mut DMatrix<f64>,
    c: &mut DVector<f64>,
    v: &mut DVector<f64>,
    w: &mut DVector<f64>,
) {
    let jac = jacobians(problem, st, obs);
    if !jac.valid {
        return;
    }
    let anchor_kf = problem.points[&obs.point].anchor_kf;
    let oi = pose_idx.get(&obs.kf).copied();
    let ai = pose_idx.get(&anchor_kf).copied();
    let di = depth_idx.get(&obs.point).copied();

    let mut blocks: Vec<(Vector2<f64>, Matrix2x6<f64>, Matrix2x6<f64>, Vector2<f64>)> =
        vec![(jac.r_left, jac.j_obs, jac.j_anchor, jac.j_gamma)];
    if let Some(r) = jac.right {
        blocks.push(r);
    }

    for (r, j_obs, j_anchor, j_gamma) in blocks {
        let e_norm = r.norm();
        let weight = if e_norm <= huber_delta { 1.0 } else { huber_delta / e_norm };
        let sw = weight.sqrt();
        let r = r * sw;

        // Collapse obs/anchor blocks when they refer to the same pose.
        let mut pose_blocks: Vec<(usize, Matrix2x6<f64>)> = Vec::new();
        match (oi, ai) {
            (Some(o), Some(a)) if o == a => pose_blocks.push((o, (j_obs + j_anchor) * sw)),
            (o, a) => {
                if let Some(o) = o {
                    pose_blocks.push((o, j_obs * sw));
                }
                if let Some(a) = a {
                    pose_blocks.push((a, j_anchor * sw));
                }
            }
        }
        let jg = di.map(|i| (i, j_gamma * sw));

        for (pi, jp) in &pose_blocks {
            let jtj = jp.transpose() * jp;
            for r_ in 0..6 {
                for c_ in 0..6 {
                    b[(pi * 6 + r_, pi * 6 + c_)] += jtj[(r_, c_)];
                }
            }
            let jtr = jp.transpose() * r;
            for r_ in 0..6 {
                v[pi * 6 + r_] += jtr[r_];
            }
        }
        if pose_blocks.len() == 2 {
            let (p0, j0) = &pose_blocks[0];
            let (p1, j1) = &pose_blocks[1];
            let cross = j0.transpose() * *j1;
            for r_ in 0..6 {
                for c_ in 0..6 {
                    b[(p0 * 6 + r_, p1 * 6 + c_)] += cross[(r_, c_)];
                    b[(p1 * 6 + c_, p0 * 6 + r_)] += cross[(r_, c_)];
                }
            }
        }
        if let Some((gi, jg)) = jg {
            c[gi] += jg.dot(&jg);
            w[gi] += jg.dot(&r);
            for (pi, jp) in &pose_blocks {
                let cross = jp.transpose() * jg;
                for r_ in 0..6 {
                    e[(pi * 6 + r_, gi)] += cross[r_];
                }
            }
        }
    }
}

/// Solve the damped system `(H + lam I) [dp; dd] = -[v; w]` by eliminating
/// the diagonal depth block.
fn schur_solve(
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    c: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
    lam: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let np = b.nrows();
    let nd = c.len();
    let mut bd = b.clone();
    for i in 0..np {
        bd[(i, i)] += lam;
    }
    let cd: DVector<f64> = c.map(|x| x + lam);
    if np == 0 {
        let dd = DVector::from_fn(nd, |i, _| -w[i] / cd[i]);
        return Some((DVector::zeros(0), dd));
    }
    // S = B - E C^-1 E^T, rhs = E C^-1 w - v
    let mut s = bd;
    let mut rhs = -v.clone();
    for gi in 0..nd {
        let col = e.column(gi);
        let inv_c = 1.0 / cd[gi];
        for r_ in 0..np {
            if col[r_] == 0.0 {
                continue;
            }
            let f = col[r_] * inv_c;
            rhs[r_] += f * w[gi];
            for c_ in 0..np {
                s[(r_, c_)] -= f * col[c_];
            }
        }
    }
    let dp = s.clone().cholesky().map(|ch| ch.solve(&rhs)).or_else(|| s.lu().solve(&rhs))?;
    let mut dd = DVector::zeros(nd);
    for gi in 0..nd {
        let et_dp = e.column(gi).dot(&dp);
        dd[gi] = -(w[gi] + et_dp) / cd[gi];
    }
    Some((dp, dd))
}

/// Public wrapper over the Schur elimination for verification against the
/// dense reference.
pub fn schur_solve_public(
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    c: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
    lam: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    schur_solve(b, e, c, v, w, lam)
}

/// Dense reference solve of the same damped normal equations, for
/// verification of the Schur path.
pub fn dense_solve_reference(
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    c: &DVector<f64>,
    v: &DVector<f64>,
    w: &DVector<f64>,
    lam: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let np = b.nrows();
    let nd = c.len();
    let n = np + nd;
    let mut h = DMatrix::<f64>::zeros(n, n);
    h.view_mut((0, 0), (np, np)).copy_from(b);
    h.view_mut((0, np), (np, nd)).copy_from(e);
    h.view_mut((np, 0), (nd, np)).copy_from(&e.transpose());
    for i in 0..nd {
        h[(np + i, np + i)] = c[i];
    }
    for i in 0..n {
        h[(i, i)] += lam;
    }
    let mut g = DVector::<f64>::zeros(n);
    g.rows_mut(0, np).copy_from(v);
    g.rows_mut(np, nd).copy_from(w);
    let sol = h.lu().solve(&(-g))?;
    Some((sol.rows(0, np).into_owned(), sol.rows(np, nd).into_owned()))
}

/// Expose one assembled system (undamped) for the Schur-vs-dense check.
pub fn assemble_normal_equations(
    problem: &BaProblem,
    huber_delta: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let free_poses: Vec<KeyframeId> = problem.free_kfs.iter().copied().filter(|k| Some(*k) != problem.gauge_kf).collect();
    let pose_idx: BTreeMap<KeyframeId, usize> = free_poses.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let free_depths: Vec<PointId> =
        problem.points.keys().copied().filter(|p| Some(*p) != problem.fixed_depth).collect();
    let depth_idx: BTreeMap<PointId, usize> = free_depths.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let np = free_poses.len() * 6;
    let nd = free_depths.len();
    let st = State {
        poses: problem.poses.clone(),
        depths: problem.points.iter().map(|(&id, p)| (id, p.inv_depth)).collect(),
    };
    let mut b = DMatrix::<f64>::zeros(np, np);
    let mut e = DMatrix::<f64>::zeros(np, nd);
    let mut c = DVector::<f64>::zeros(nd);
    let mut v = DVector::<f64>::zeros(np);
    let mut w = DVector::<f64>::zeros(nd);
    for obs in &problem.observations {
        accumulate(problem, &st, obs, huber_delta, &pose_idx, &depth_idx, &mut b, &mut e, &mut c, &mut v, &mut w);
    }
    (b, e, c, v, w)
}

/// Numeric residual evaluation with perturbed states, for finite-difference
/// Jacobian checks.
pub fn perturbed_residual(
    problem: &BaProblem,
    obs: &BaObservation,
    pose_perturb: Option<(KeyframeId, Vector6<f64>)>,
    depth_perturb: Option<(PointId, f64)>,
) -> (Vector2<f64>, Option<Vector2<f64>>) {
    let mut st = State {
        poses: problem.poses.clone(),
        depths: problem.points.iter().map(|(&id, p)| (id, p.inv_depth)).collect(),
    };
    if let Some((kf, xi)) = pose_perturb {
        let p = st.poses.get_mut(&kf).unwrap();
        *p = p.compose(&Se3::exp(&xi));
    }
    if let Some((pid, dg)) = depth_perturb {
        *st.depths.get_mut(&pid).unwrap() += dg;
    }
    residuals(problem, &st, obs)
}

/// Analytic Jacobian blocks of one observation for testing.
pub fn analytic_jacobian(
    problem: &BaProblem,
    obs: &BaObservation,
) -> Option<(Matrix2x6<f64>, Matrix2x6<f64>, Vector2<f64>, Option<(Matrix2x6<f64>, Matrix2x6<f64>, Vector2<f64>)>)> {
    let st = State {
        poses: problem.poses.clone(),
        depths: problem.points.iter().map(|(&id, p)| (id, p.inv_depth)).collect(),
    };
    let j = jacobians(problem, &st, obs);
    if !j.valid {
        return None;
    }
    let right = j.right.map(|(_, a, b, g)| (a, b, g));
    Some((j.j_obs, j.j_anchor, j.j_gamma, right))
}

/// Build the local bundle adjustment problem around `kf_id`: free keyframes
/// share at least `min_shared` observations with it, free landmarks are all
/// points they observe, remaining observers are fixed, and the oldest free
/// keyframe is the gauge.
pub fn build_local_ba(map: &SlamMap, kf_id: KeyframeId, config: &SlamConfig) -> BaProblem {
    let mut free: Vec<KeyframeId> = vec![kf_id];
    for (n, count) in map.covisibility.neighbors(kf_id) {
        if count as usize >= config.ba_min_shared_obs && map.keyframes.contains_key(&n) {
            free.push(n);
        }
    }
    free.sort_unstable();
    free.dedup();

    let mut point_ids: Vec<PointId> = Vec::new();
    for &f in &free {
        if let Some(kf) = map.keyframes.get(&f) {
            point_ids.extend(kf.obs_index.keys().copied());
        }
    }
    point_ids.sort_unstable();
    point_ids.dedup();
    // landmarks need two observing keyframes in the problem to move
    point_ids.retain(|pid| map.points.get(pid).map_or(false, |p| p.observers.len() >= 2));

    let mut fixed: Vec<KeyframeId> = Vec::new();
    for pid in &point_ids {
        for &obs_kf in &map.points[pid].observers {
            if !free.contains(&obs_kf) {
                fixed.push(obs_kf);
            }
        }
    }
    fixed.sort_unstable();
    fixed.dedup();

    let gauge_kf = free.first().copied();

    let mut poses = BTreeMap::new();
    for &k in free.iter().chain(fixed.iter()) {
        poses.insert(k, map.keyframes[&k].pose_wc);
    }

    let mut points = BTreeMap::new();
    let mut observations = Vec::new();
    for pid in &point_ids {
        let mp = &map.points[pid];
        if !poses.contains_key(&mp.anchor_kf) {
            continue;
        }
        points.insert(
            *pid,
            BaPoint { anchor_kf: mp.anchor_kf, bearing: map.calib.left.unproject(&mp.anchor_px), inv_depth: mp.inv_depth },
        );
        for &obs_kf in &mp.observers {
            let Some(kf) = map.keyframes.get(&obs_kf) else { continue };
            let Some(&fid) = kf.obs_index.get(pid) else { continue };
            let kp = &kf.keypoints[&fid];
            observations.push(BaObservation { kf: obs_kf, point: *pid, px: kp.undist_px, right_px: kp.right_undist_px });
        }
    }

    // Monocular scale gauge: no fixed observer pins scale, so pin the
    // best-observed inverse depth.
    let fixed_depth = if config.mode == Mode::Mono && fixed.is_empty() && !points.is_empty() {
        points
            .keys()
            .max_by_key(|pid| (map.points[pid].observers.len(), std::cmp::Reverse(**pid)))
            .copied()
    } else {
        None
    };

    BaProblem {
        free_kfs: free,
        gauge_kf,
        fixed_kfs: fixed,
        poses,
        points,
        fixed_depth,
        observations,
        left_cam: map.calib.left,
        right_cam: map.calib.right,
        t_rl: map.calib.t_rl,
    }
}
