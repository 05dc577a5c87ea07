//! Small dense helpers on top of nalgebra.

use std::f64::consts::{FRAC_1_PI, FRAC_1_SQRT_2};

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

/// Solves `a x = b` by LU with partial pivoting; `None` when `a` is singular.
pub fn solve_complex(a: DMatrix<Complex64>, b: &DVector<Complex64>) -> Option<DVector<Complex64>> {
    let x = a.lu().solve(b)?;
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(x)
}

/// Determinant by row reduction with partial pivoting, divided by the product
/// of the Euclidean norms of the original rows. The result lies in [-1, 1].
pub fn scaled_determinant(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "determinant of a non-square matrix");
    if n == 0 {
        return 1.0;
    }
    let mut m = a.clone();
    for i in 0..n {
        let norm = m.row(i).norm();
        if norm == 0.0 {
            return 0.0;
        }
        m.row_mut(i).scale_mut(1.0 / norm);
    }
    let mut det = 1.0;
    for col in 0..n {
        let (pivot, max) =
            (col..n).map(|r| (r, m[(r, col)].abs())).fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if max == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap_rows(pivot, col);
            det = -det;
        }
        let p = m[(col, col)];
        det *= p;
        for r in col + 1..n {
            let factor = m[(r, col)] / p;
            if factor != 0.0 {
                for c in col..n {
                    let v = m[(col, c)];
                    m[(r, c)] -= factor * v;
                }
            }
        }
    }
    det
}

/// Determinant of a complex square matrix via LU.
pub fn complex_determinant(a: &DMatrix<Complex64>) -> Complex64 {
    if a.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    a.clone().lu().determinant()
}

/// Adjugate (transposed cofactor matrix) of a complex square matrix.
pub fn complex_adjugate(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    let mut adj = DMatrix::zeros(n, n);
    if n == 1 {
        adj[(0, 0)] = Complex64::new(1.0, 0.0);
        return adj;
    }
    for i in 0..n {
        for j in 0..n {
            let minor = a.clone().remove_row(i).remove_column(j);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = complex_determinant(&minor) * sign;
        }
    }
    adj
}

/// Cofactors `C_{p,0}` of the first column of `a`.
pub fn first_column_cofactors(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|p| {
            let minor = a.clone().remove_row(p).remove_column(0);
            let det = if minor.nrows() == 0 { 1.0 } else { minor.lu().determinant() };
            if p % 2 == 0 {
                det
            } else {
                -det
            }
        })
        .collect()
}

/// Roots of the monic real polynomial `x^n + c[0] x^{n-1} + ... + c[n-1]`
/// from the eigenvalues of its companion matrix, polished by Newton steps.
pub fn monic_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len();
    if n == 0 {
        return Vec::new();
    }
    if coeffs.iter().all(|&c| c == 0.0) {
        return vec![Complex64::new(0.0, 0.0); n];
    }
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for (j, &c) in coeffs.iter().enumerate() {
        companion[(0, j)] = -c;
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    let mut roots = companion_eigenvalues(&companion, coeffs).unwrap_or_else(|| durand_kerner(coeffs));
    for root in &mut roots {
        polish_root(coeffs, root);
    }
    roots
}

/// Iteration cap of one Schur attempt; the unbounded iteration can cycle on
/// root sets symmetric about the origin.
const SCHUR_MAX_ITER: usize = 10_000;

/// Companion eigenvalues, retried on diagonal shifts when the QR iteration stalls.
fn companion_eigenvalues(companion: &DMatrix<f64>, coeffs: &[f64]) -> Option<Vec<Complex64>> {
    let radius = root_bound(coeffs);
    for shift in [0.0, FRAC_1_PI, -0.577_215_665, FRAC_1_SQRT_2] {
        let s = shift * radius;
        let shifted = companion + DMatrix::<f64>::identity(coeffs.len(), coeffs.len()) * s;
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, SCHUR_MAX_ITER) {
            return Some(schur.complex_eigenvalues().iter().map(|z| z - s).collect());
        }
    }
    None
}

/// Cauchy bound: every root satisfies `|x| <= 1 + max |c_i|`.
fn root_bound(coeffs: &[f64]) -> f64 {
    1.0 + coeffs.iter().fold(0.0, |m: f64, c| m.max(c.abs()))
}

/// Simultaneous Weierstrass iteration; last resort when every Schur attempt stalls.
fn durand_kerner(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len();
    let radius = root_bound(coeffs);
    let seed = Complex64::from_polar(1.0, 0.4);
    let mut roots: Vec<Complex64> = (0..n).map(|i| seed.powi(i as i32) * radius).collect();
    for _ in 0..1000 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let (p, _) = eval_monic(coeffs, roots[i]);
            let denom: Complex64 = (0..n).filter(|&j| j != i).map(|j| roots[i] - roots[j]).product();
            if denom.norm() == 0.0 {
                continue;
            }
            let step = p / denom;
            roots[i] -= step;
            moved = moved.max(step.norm());
        }
        if moved <= 1e-15 * radius {
            break;
        }
    }
    roots
}

fn eval_monic(coeffs: &[f64], x: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(1.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

fn polish_root(coeffs: &[f64], root: &mut Complex64) {
    let (mut p, _) = eval_monic(coeffs, *root);
    for _ in 0..3 {
        let (_, dp) = eval_monic(coeffs, *root);
        if dp.norm() == 0.0 {
            return;
        }
        let candidate = *root - p / dp;
        let (pc, _) = eval_monic(coeffs, candidate);
        if pc.norm() < p.norm() {
            *root = candidate;
            p = pc;
        } else {
            return;
        }
    }
}

/// Largest relative root sensitivity `sum_i |c_i| |x|^i / (|x| |p'(x)|)`.
pub fn root_condition(coeffs: &[f64], roots: &[Complex64]) -> f64 {
    let n = coeffs.len();
    roots
        .iter()
        .map(|&x| {
            let (_, dp) = eval_monic(coeffs, x);
            let r = x.norm();
            let mut magnitude = r.powi(n as i32);
            for (i, c) in coeffs.iter().enumerate() {
                magnitude += c.abs() * r.powi((n - 1 - i) as i32);
            }
            let denom = dp.norm() * r.max(f64::MIN_POSITIVE);
            if denom == 0.0 {
                f64::INFINITY
            } else {
                magnitude / denom
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scaled_det_matches_raw_det() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, -1.0, 3.0, 2.0, 0.0, 4.0, -2.0]);
        let raw = a.clone().lu().determinant();
        let norms: f64 = (0..3).map(|i| a.row(i).norm()).product();
        assert_relative_eq!(scaled_determinant(&a), raw / norms, epsilon = 1e-14);
        let id = DMatrix::<f64>::identity(4, 4);
        assert_eq!(scaled_determinant(&id), 1.0);
    }

    #[test]
    fn cofactor_expansion_gives_det() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, -1.0, 3.0, 2.0, 0.0, 4.0, -2.0]);
        let c = first_column_cofactors(&a);
        let det: f64 = (0..3).map(|p| a[(p, 0)] * c[p]).sum();
        assert_relative_eq!(det, a.clone().lu().determinant(), epsilon = 1e-12);
    }

    #[test]
    fn adjugate_inverse_relation() {
        let a = DMatrix::from_fn(3, 3, |i, j| Complex64::new((i * 3 + j) as f64 + 0.5, (i + 2 * j) as f64 * 0.1 - 0.3));
        let adj = complex_adjugate(&a);
        let det = complex_determinant(&a);
        let prod = &a * &adj;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { det } else { Complex64::new(0.0, 0.0) };
                assert!((prod[(i, j)] - expect).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn companion_roots() {
        // (x - 1)(x + 2)(x^2 + 1) = x^4 + x^3 - x^2 + x - 2
        let mut roots = monic_roots(&[1.0, -1.0, 1.0, -2.0]);
        roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let expected =
            [Complex64::new(-2.0, 0.0), Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0), Complex64::new(1.0, 0.0)];
        for (r, e) in roots.iter().zip(expected) {
            assert!((r - e).norm() < 1e-12, "{r} vs {e}");
        }
        assert_eq!(monic_roots(&[0.0, 0.0]), vec![Complex64::new(0.0, 0.0); 2]);
    }

    fn assert_roots(coeffs: &[f64], roots: &[Complex64]) {
        assert_eq!(roots.len(), coeffs.len());
        for &x in roots {
            let (p, _) = eval_monic(coeffs, x);
            assert!(p.norm() < 1e-12, "p({x}) = {p}");
        }
    }

    #[test]
    fn symmetric_root_sets_terminate() {
        // odd coefficients vanish; unshifted QR cycles on these companions
        let cases: [&[f64]; 4] = [
            &[0.0, 0.3994680515083255, 0.0, 0.04458322395852037],
            &[0.0, -0.016895566589816183, 0.0, -6.058099171629371e-5, 0.0, -1.6076704391933128e-7],
            &[0.0, 0.013385545208087189, 0.0, 0.0001244255698039902],
            &[0.0, 0.714809226100434, 0.0, 0.35482793730437606],
        ];
        for coeffs in cases {
            assert_roots(coeffs, &monic_roots(coeffs));
        }
    }

    #[test]
    fn durand_kerner_fallback_finds_roots() {
        let coeffs = [1.0, -1.0, 1.0, -2.0];
        let mut roots = durand_kerner(&coeffs);
        for root in &mut roots {
            polish_root(&coeffs, root);
        }
        assert_roots(&coeffs, &roots);
    }
}
