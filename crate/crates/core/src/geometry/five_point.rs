//! Minimal five-point essential matrix solver (Nistér-style) plus the RANSAC
//! loop and pose decomposition used for relative pose estimation.
//!
//! The minimal solver builds the 4-dimensional nullspace of the epipolar
//! constraints, expands the ten cubic constraints (det E = 0 and the trace
//! identity) over a 20-monomial basis, eliminates down to a 3x3 polynomial
//! system in z and reads the candidates off the roots of its degree-10
//! determinant.

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use super::camera::CameraModel;
use super::epipolar::epipolar_distance_sym;
use super::poly;
use super::se3::Se3;
use super::triangulate::triangulate;

/// Correspondence of normalized-plane bearings (z = 1) between two views.
pub type BearingPair = (Vector3<f64>, Vector3<f64>);

// Degree-1 polynomial in (x, y, z): coefficients [x, y, z, 1].
type Poly1 = [f64; 4];
// Degree-2 monomials: x2, y2, z2, xy, xz, yz, x, y, z, 1.
type Poly2 = [f64; 10];
// Degree-3 monomials, ordered so the first ten can be eliminated:
// x3, y3, x2y, xy2, x2z, x2, y2z, y2, xyz, xy | xz2, xz, x, yz2, yz, y, z3, z2, z, 1.
type Poly3 = [f64; 20];

fn p1_mul_p1(a: &Poly1, b: &Poly1) -> Poly2 {
    let mut r = [0.0; 10];
    r[0] = a[0] * b[0];
    r[1] = a[1] * b[1];
    r[2] = a[2] * b[2];
    r[3] = a[0] * b[1] + a[1] * b[0];
    r[4] = a[0] * b[2] + a[2] * b[0];
    r[5] = a[1] * b[2] + a[2] * b[1];
    r[6] = a[0] * b[3] + a[3] * b[0];
    r[7] = a[1] * b[3] + a[3] * b[1];
    r[8] = a[2] * b[3] + a[3] * b[2];
    r[9] = a[3] * b[3];
    r
}

// Exponents of each Poly2 monomial in (x, y, z).
const P2_EXP: [(u8, u8, u8); 10] = [
    (2, 0, 0),
    (0, 2, 0),
    (0, 0, 2),
    (1, 1, 0),
    (1, 0, 1),
    (0, 1, 1),
    (1, 0, 0),
    (0, 1, 0),
    (0, 0, 1),
    (0, 0, 0),
];

const P1_EXP: [(u8, u8, u8); 4] = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0)];

fn p3_index(e: (u8, u8, u8)) -> usize {
    match e {
        (3, 0, 0) => 0,
        (0, 3, 0) => 1,
        (2, 1, 0) => 2,
        (1, 2, 0) => 3,
        (2, 0, 1) => 4,
        (2, 0, 0) => 5,
        (0, 2, 1) => 6,
        (0, 2, 0) => 7,
        (1, 1, 1) => 8,
        (1, 1, 0) => 9,
        (1, 0, 2) => 10,
        (1, 0, 1) => 11,
        (1, 0, 0) => 12,
        (0, 1, 2) => 13,
        (0, 1, 1) => 14,
        (0, 1, 0) => 15,
        (0, 0, 3) => 16,
        (0, 0, 2) => 17,
        (0, 0, 1) => 18,
        (0, 0, 0) => 19,
        _ => unreachable!("monomial degree > 3"),
    }
}

fn p2_mul_p1(a: &Poly2, b: &Poly1) -> Poly3 {
    let mut r = [0.0; 20];
    for (i, &ca) in a.iter().enumerate() {
        if ca == 0.0 {
            continue;
        }
        for (j, &cb) in b.iter().enumerate() {
            if cb == 0.0 {
                continue;
            }
            let ea = P2_EXP[i];
            let eb = P1_EXP[j];
            r[p3_index((ea.0 + eb.0, ea.1 + eb.1, ea.2 + eb.2))] += ca * cb;
        }
    }
    r
}

fn p2_add(a: &Poly2, b: &Poly2) -> Poly2 {
    let mut r = *a;
    for i in 0..10 {
        r[i] += b[i];
    }
    r
}

fn p2_scale(a: &Poly2, s: f64) -> Poly2 {
    let mut r = *a;
    for v in &mut r {
        *v *= s;
    }
    r
}

/// Up to ten essential matrix candidates from the first five correspondences.
pub fn five_point_candidates(pairs: &[BearingPair]) -> Vec<Matrix3<f64>> {
    assert!(pairs.len() >= 5, "five correspondences required");
    let candidates = five_point_general(pairs);
    if candidates.is_empty() {
        rotation_family_candidates(pairs)
    } else {
        candidates
    }
}

fn five_point_general(pairs: &[BearingPair]) -> Vec<Matrix3<f64>> {

    // Epipolar constraints q_b^T E q_a = 0, E flattened row-major. Rows are
    // zero-padded to 9x9 so the full right singular basis is available.
    let mut q = SMatrix::<f64, 9, 9>::zeros();
    for (row, (qa, qb)) in pairs.iter().take(5).enumerate() {
        let a = qa / qa.z;
        let b = qb / qb.z;
        q.set_row(
            row,
            &nalgebra::RowSVector::<f64, 9>::from_row_slice(&[
                b.x * a.x,
                b.x * a.y,
                b.x,
                b.y * a.x,
                b.y * a.y,
                b.y,
                a.x,
                a.y,
                1.0,
            ]),
        );
    }
    let svd = q.svd(false, true);
    let v_t = match svd.v_t {
        Some(v) => v,
        None => return vec![],
    };
    // Last four right singular vectors span the nullspace.
    let basis: Vec<Matrix3<f64>> = (5..9)
        .map(|i| {
            let r = v_t.row(i);
            Matrix3::from_row_slice(&[r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]])
        })
        .collect();

    // E(x,y,z) = x E0 + y E1 + z E2 + E3 as degree-1 polynomials per entry.
    let mut e_poly = [[([0.0; 4] as Poly1); 3]; 3];
    for r in 0..3 {
        for cidx in 0..3 {
            e_poly[r][cidx] = [basis[0][(r, cidx)], basis[1][(r, cidx)], basis[2][(r, cidx)], basis[3][(r, cidx)]];
        }
    }

    // Ten cubic constraints over the 20-monomial basis.
    let mut rows: Vec<Poly3> = Vec::with_capacity(10);

    // det(E) = 0
    let minor = |r0: usize, r1: usize, c0: usize, c1: usize| -> Poly2 {
        p2_add(
            &p1_mul_p1(&e_poly[r0][c0], &e_poly[r1][c1]),
            &p2_scale(&p1_mul_p1(&e_poly[r0][c1], &e_poly[r1][c0]), -1.0),
        )
    };
    let det = {
        let m00 = minor(1, 2, 1, 2);
        let m01 = minor(1, 2, 0, 2);
        let m02 = minor(1, 2, 0, 1);
        let mut d = p2_mul_p1(&m00, &e_poly[0][0]);
        let d1 = p2_mul_p1(&m01, &e_poly[0][1]);
        let d2 = p2_mul_p1(&m02, &e_poly[0][2]);
        for i in 0..20 {
            d[i] = d[i] - d1[i] + d2[i];
        }
        d
    };
    rows.push(det);

    // 2 E E^T E - tr(E E^T) E = 0
    let mut eet = [[([0.0; 10] as Poly2); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = [0.0; 10];
            for k in 0..3 {
                acc = p2_add(&acc, &p1_mul_p1(&e_poly[r][k], &e_poly[c][k]));
            }
            eet[r][c] = acc;
        }
    }
    let trace = p2_add(&p2_add(&eet[0][0], &eet[1][1]), &eet[2][2]);
    for r in 0..3 {
        for c in 0..3 {
            let mut lhs = [0.0; 20];
            for k in 0..3 {
                let mut coef = p2_scale(&eet[r][k], 2.0);
                if k == r {
                    coef = p2_add(&coef, &p2_scale(&trace, -1.0));
                }
                let term = p2_mul_p1(&coef, &e_poly[k][c]);
                for i in 0..20 {
                    lhs[i] += term[i];
                }
            }
            rows.push(lhs);
        }
    }

    // Gauss-Jordan eliminate the first ten monomial columns.
    let mut a = DMatrix::<f64>::from_fn(10, 20, |r, c| rows[r][c]);
    for col in 0..10 {
        let mut pivot = col;
        let mut best = a[(col, col)].abs();
        for r in (col + 1)..10 {
            if a[(r, col)].abs() > best {
                best = a[(r, col)].abs();
                pivot = r;
            }
        }
        if best < 1e-12 {
            return vec![];
        }
        a.swap_rows(col, pivot);
        let p = a[(col, col)];
        for c in col..20 {
            a[(col, c)] /= p;
        }
        for r in 0..10 {
            if r != col {
                let f = a[(r, col)];
                if f != 0.0 {
                    for c in col..20 {
                        a[(r, c)] -= f * a[(col, c)];
                    }
                }
            }
        }
    }

    // Reduced row i: monomial_i = -(p_i(z) x + q_i(z) y + r_i(z)) with
    // p, q quadratic and r cubic in z. Pair the x2z/x2, xyz/xy, y2z/y2 rows
    // into three equations a(z) x + b(z) y + c(z) = 0.
    let tail = |row: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = |c: usize| a[(row, 10 + c)];
        (vec![g(2), g(1), g(0)], vec![g(5), g(4), g(3)], vec![g(9), g(8), g(7), g(6)])
    };
    // Row order after elimination matches the leading monomial order:
    // 4 = x2z, 5 = x2, 6 = y2z, 7 = y2, 8 = xyz, 9 = xy.
    let pairs_rows = [(4usize, 5usize), (8, 9), (6, 7)];
    let z_poly = [0.0, 1.0];
    let mut m_rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(3);
    for &(rz, r1) in &pairs_rows {
        let (pz, qz, rzc) = tail(rz);
        let (p1c, q1c, r1c) = tail(r1);
        let av = poly::sub(&poly::mul(&z_poly, &p1c), &pz);
        let bv = poly::sub(&poly::mul(&z_poly, &q1c), &qz);
        let cv = poly::sub(&poly::mul(&z_poly, &r1c), &rzc);
        m_rows.push((av, bv, cv));
    }

    // det of the 3x3 polynomial matrix -> degree-10 polynomial in z.
    let det_poly = {
        let (a1, b1, c1) = (&m_rows[0].0, &m_rows[0].1, &m_rows[0].2);
        let (a2, b2, c2) = (&m_rows[1].0, &m_rows[1].1, &m_rows[1].2);
        let (a3, b3, c3) = (&m_rows[2].0, &m_rows[2].1, &m_rows[2].2);
        let t1 = poly::mul(a1, &poly::sub(&poly::mul(b2, c3), &poly::mul(b3, c2)));
        let t2 = poly::mul(b1, &poly::sub(&poly::mul(a2, c3), &poly::mul(a3, c2)));
        let t3 = poly::mul(c1, &poly::sub(&poly::mul(a2, b3), &poly::mul(a3, b2)));
        poly::add(&poly::sub(&t1, &t2), &t3)
    };

    let mut candidates = Vec::new();
    for z in poly::real_roots(&det_poly) {
        // Solve the 3x2 system for (x, y) by least squares.
        let mut m = SMatrix::<f64, 3, 2>::zeros();
        let mut rhs = Vector3::zeros();
        for (i, (av, bv, cv)) in m_rows.iter().enumerate() {
            m[(i, 0)] = poly::eval(av, z);
            m[(i, 1)] = poly::eval(bv, z);
            rhs[i] = -poly::eval(cv, z);
        }
        let svd = m.svd(true, true);
        let xy = match svd.solve(&rhs, 1e-12) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let (x, y) = (xy[0], xy[1]);
        let mut e = basis[0] * x + basis[1] * y + basis[2] * z + basis[3];
        let n = e.norm();
        if n < 1e-12 {
            continue;
        }
        e /= n;
        candidates.push(e);
    }
    candidates
}

/// Fallback for the (near-)pure-rotation degeneracy, where the polynomial
/// system collapses because every `[t]x R` with the true rotation satisfies
/// the sample. Fits R directly and returns representatives of that family;
/// they score as exact models on rotation-only data and lose the consensus
/// vote otherwise.
fn rotation_family_candidates(pairs: &[BearingPair]) -> Vec<Matrix3<f64>> {
    let mut h = Matrix3::zeros();
    for (qa, qb) in pairs.iter().take(5) {
        h += qa.normalize() * qb.normalize().transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return vec![],
    };
    let mut s = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rot = v_t.transpose() * s * u.transpose();
    let fit = pairs
        .iter()
        .take(5)
        .map(|(qa, qb)| (rot * qa.normalize()).cross(&qb.normalize()).norm())
        .fold(0.0f64, f64::max);
    if fit > 1e-5 {
        return vec![];
    }
    [Vector3::x(), Vector3::y(), Vector3::z()]
        .iter()
        .map(|t| {
            let e = super::se3::skew(t) * rot;
            e / e.norm()
        })
        .collect()
}

/// Relative pose `t_ba` (frame a to frame b, unit translation) recovered from
/// an essential matrix by cheirality voting over the given correspondences.
pub fn decompose_essential(e: &Matrix3<f64>, pairs: &[BearingPair]) -> Option<(Se3, usize)> {
    let svd = e.svd(true, true);
    let mut u = svd.u?;
    let mut v_t = svd.v_t?;
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned();

    let mut best: Option<(Se3, usize)> = None;
    for rot in [r1, r2] {
        for sign in [1.0, -1.0] {
            let cand = Se3::from_matrix3(&rot, t * sign);
            let pose_a = Se3::identity();
            let mut good = 0;
            for (qa, qb) in pairs {
                if triangulate(&pose_a, &cand, qa, qb, 0.0).is_ok() {
                    good += 1;
                }
            }
            if best.as_ref().map_or(true, |(_, b)| good > *b) {
                best = Some((cand, good));
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct EssentialRansacResult {
    pub essential: Matrix3<f64>,
    pub inliers: Vec<bool>,
    pub num_inliers: usize,
    pub iterations: usize,
}

/// Five-point RANSAC over bearing correspondences. The inlier test is the
/// symmetric epipolar distance in pixels.
pub fn essential_ransac(
    pairs: &[BearingPair],
    cam_a: &CameraModel,
    cam_b: &CameraModel,
    threshold_px: f64,
    confidence: f64,
    max_iterations: usize,
    rng: &mut impl Rng,
) -> Option<EssentialRansacResult> {
    let n = pairs.len();
    if n < 5 {
        return None;
    }
    let mut best: Option<EssentialRansacResult> = None;
    let mut required = max_iterations;
    let mut it = 0;
    while it < required.min(max_iterations) {
        it += 1;
        let idx = sample(rng, n, 5);
        let sample_pairs: Vec<BearingPair> = idx.iter().map(|i| pairs[i]).collect();
        for e in five_point_candidates(&sample_pairs) {
            let mut inliers = vec![false; n];
            let mut count = 0;
            for (i, (qa, qb)) in pairs.iter().enumerate() {
                if epipolar_distance_sym(&e, qa, qb, cam_a, cam_b) < threshold_px {
                    inliers[i] = true;
                    count += 1;
                }
            }
            if count >= 5 && best.as_ref().map_or(true, |b| count > b.num_inliers) {
                best = Some(EssentialRansacResult { essential: e, inliers, num_inliers: count, iterations: it });
                let w = count as f64 / n as f64;
                let denom = (1.0 - w.powi(5)).max(1e-12).ln();
                if denom < 0.0 {
                    required = (((1.0 - confidence).ln() / denom).ceil() as usize).max(1);
                }
            }
        }
    }
    best
}
