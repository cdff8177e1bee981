//! Small univariate polynomial helpers (ascending coefficients) shared by
//! the minimal solvers. Root finding goes through the companion matrix and
//! is polished by Newton steps.

use nalgebra::DMatrix;

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; a.len() + b.len() - 1];
    for (i, &ca) in a.iter().enumerate() {
        for (j, &cb) in b.iter().enumerate() {
            r[i + j] += ca * cb;
        }
    }
    r
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0))
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|&c| c * s).collect()
}

pub fn eval(a: &[f64], z: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

pub fn deriv(a: &[f64]) -> Vec<f64> {
    a.iter().enumerate().skip(1).map(|(i, &c)| c * i as f64).collect()
}

pub fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    let max_mag = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_mag == 0.0 {
        return vec![];
    }
    while let Some(&last) = c.last() {
        if last.abs() < 1e-13 * max_mag && c.len() > 1 {
            c.pop();
        } else {
            break;
        }
    }
    let n = c.len() - 1;
    if n == 0 {
        return vec![];
    }
    let lead = c[n];
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -c[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    let d = deriv(&c);
    let mut roots = Vec::new();
    for ev in eig.iter() {
        if ev.im.abs() > 1e-6 * (1.0 + ev.re.abs()) {
            continue;
        }
        let mut z = ev.re;
        for _ in 0..6 {
            let f = eval(&c, z);
            let df = eval(&d, z);
            if df.abs() < 1e-30 {
                break;
            }
            let step = f / df;
            z -= step;
            if step.abs() < 1e-14 * (1.0 + z.abs()) {
                break;
            }
        }
        roots.push(z);
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roots_of_factored_polynomial() {
        // (z-1)(z+2)(z-3.5) = z^3 - 2.5 z^2 - 6.5 z + 7
        let p = mul(&mul(&[-1.0, 1.0], &[2.0, 1.0]), &[-3.5, 1.0]);
        let mut roots = real_roots(&p);
        roots.sort_by(f64::total_cmp);
        assert_eq!(roots.len(), 3);
        for (r, want) in roots.iter().zip([-2.0, 1.0, 3.5]) {
            assert!((r - want).abs() < 1e-10);
        }
    }

    #[test]
    fn complex_roots_filtered() {
        // z^2 + 1 has no real roots
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
    }
}
