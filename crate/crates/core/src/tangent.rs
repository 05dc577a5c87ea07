//! Derivatives at a critical point and the linear restart guess next to it.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cluster::{invert_power_sums, pn_coefficients, power_sums, PowerSums};
use crate::critical::CriticalPoint;
use crate::error::{Error, Result};
use crate::linalg::{first_column_cofactors, solve_complex};
use crate::solver::{symmetrize, PairEnergies, RichardsonSystem, REALITY_TOL};

/// Condition estimate above which the power-sum inversion is reported.
pub const ILL_CONDITIONED: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentData {
    pub ds1_dg: f64,
    pub de_dg: Vec<Complex64>,
    pub point: CriticalPoint,
}

/// Linear system in the unknowns `(dS_1/dg, de_b/dg)`.
#[derive(Debug, Clone)]
pub struct DerivativeSystem {
    pub matrix: DMatrix<Complex64>,
    pub rhs: DVector<Complex64>,
}

/// The `2 M_k x 2 M_k` matrix `B` with its first column zeroed; that column
/// carries the unknowns.
pub fn b_matrix(g_c: f64, p: &[f64], m_k: usize) -> DMatrix<f64> {
    let size = 2 * m_k;
    DMatrix::from_fn(size, size, |r, c| {
        let (row, col) = (r + 1, c + 1);
        if col == 1 {
            0.0
        } else if col == row {
            1.0 + 4.0 * g_c * p[0]
        } else if col + 1 == row {
            -2.0 * g_c * (m_k as f64 + 1.0 - row as f64)
        } else if col > row {
            4.0 * g_c * p[col - row]
        } else {
            0.0
        }
    })
}

pub fn assemble_derivative_system(point: &CriticalPoint, sys: &RichardsonSystem) -> Result<DerivativeSystem> {
    let (g, k, m_k) = (point.g_c, point.k, point.m_k);
    let size = 2 * m_k;
    let pn = pn_coefficients(sys, k, &point.e_noncluster, size)?;
    let b = b_matrix(g, &pn.p, m_k);
    let cof = first_column_cofactors(&b);
    // chi_p for p = 0..=size + 1, zero outside 1..=m_k
    let mut chi = vec![0.0; size + 2];
    chi[1..=m_k].copy_from_slice(&point.chi);
    let two_eta_k = 2.0 * sys.eta()[k];
    let e = &point.e_noncluster;
    let x: Vec<Complex64> = e.iter().map(|z| two_eta_k - z).collect();
    let n = e.len();
    let mut matrix = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);

    // det B = 0 expanded along the first column
    for p in 1..=size {
        let c_p = cof[p - 1];
        let constant = -chi[p] / g;
        let s_p: f64 = -2.0 * g * (1..p.saturating_sub(1)).map(|i| chi[p - i - 1] * chi[i]).sum::<f64>();
        matrix[(0, 0)] += Complex64::new(c_p * s_p, 0.0);
        rhs[0] -= Complex64::new(c_p * constant, 0.0);
        if p <= m_k {
            for (b_idx, &xb) in x.iter().enumerate() {
                let mut w = Complex64::new(0.0, 0.0);
                for nn in 0..=(m_k - p) {
                    w += chi[nn + p] * (nn as f64 + 1.0) / xb.powu(nn as u32 + 2);
                }
                matrix[(0, b_idx + 1)] += 4.0 * g * c_p * w;
            }
        }
    }

    // derivative of the non-cluster equations
    for a in 0..n {
        let row = a + 1;
        rhs[row] = Complex64::new(1.0 / g, 0.0);
        let mut diag = Complex64::new(0.0, 0.0);
        for (&eta, &d) in sys.eta().iter().zip(sys.d()) {
            let y = 2.0 * eta - e[a];
            diag -= 4.0 * g * d / (y * y);
        }
        diag -= 4.0 * g * m_k as f64 / (x[a] * x[a]);
        for bb in 0..n {
            if bb != a {
                let diff = e[a] - e[bb];
                let w = 4.0 * g / (diff * diff);
                matrix[(row, bb + 1)] += w;
                diag -= w;
            }
        }
        matrix[(row, a + 1)] += diag;
        let s1: Complex64 =
            chi.iter().enumerate().take(m_k + 1).skip(1).map(|(nn, &c)| c / x[a].powu(nn as u32 + 1)).sum();
        matrix[(row, 0)] = -4.0 * g * s1;
    }
    Ok(DerivativeSystem { matrix, rhs })
}

/// Solves the derivative system and checks its invariants.
pub fn solve_tangent(point: &CriticalPoint, sys: &RichardsonSystem) -> Result<TangentData> {
    let system = assemble_derivative_system(point, sys)?;
    let degenerate = || Error::DegenerateTangent { g_c: point.g_c };
    let sol = solve_complex(system.matrix.clone(), &system.rhs).ok_or_else(degenerate)?;
    // residual relative to the row norms
    let r = &system.matrix * &sol - &system.rhs;
    for i in 0..r.len() {
        let row_norm = system.matrix.row(i).iter().map(|z| z.norm()).sum::<f64>()
            * sol.iter().map(|z| z.norm()).fold(1.0, f64::max)
            + system.rhs[i].norm();
        if r[i].norm() > 1e-9 * row_norm.max(f64::MIN_POSITIVE) {
            return Err(degenerate());
        }
    }
    let ds1 = sol[0];
    if ds1.im.abs() > REALITY_TOL.max(1e-7 * ds1.norm()) {
        return Err(Error::Consistency(format!("dS_1/dg = {ds1} is not real")));
    }
    let mut de_dg: Vec<Complex64> = sol.iter().skip(1).copied().collect();
    conjugate_like(&point.e_noncluster, &mut de_dg);
    Ok(TangentData { ds1_dg: ds1.re, de_dg, point: point.clone() })
}

/// Imposes on `values` the conjugate pairing of `pattern`.
fn conjugate_like(pattern: &[Complex64], values: &mut [Complex64]) {
    let n = pattern.len();
    let mut done = vec![false; n];
    for a in 0..n {
        if done[a] {
            continue;
        }
        done[a] = true;
        let scale = pattern[a].norm().max(1.0);
        if pattern[a].im.abs() <= 1e-12 * scale {
            values[a].im = 0.0;
            continue;
        }
        let partner = (0..n).filter(|&b| !done[b]).min_by(|&b, &c| {
            (pattern[b] - pattern[a].conj()).norm().total_cmp(&(pattern[c] - pattern[a].conj()).norm())
        });
        if let Some(b) = partner {
            let avg = 0.5 * (values[a] + values[b].conj());
            values[a] = avg;
            values[b] = avg.conj();
            done[b] = true;
        }
    }
}

/// Default admissible `|delta_g|` for [`linear_guess`].
pub fn guess_radius(g_c: f64) -> f64 {
    (1e-2 * g_c.abs()).max(1e-3)
}

#[derive(Debug, Clone)]
pub struct LinearGuess {
    pub state: PairEnergies,
    /// Condition estimate of the power-sum inversion.
    pub condition: f64,
    pub warnings: Vec<String>,
}

/// Starting values at `g_c + delta_g` from the first-order expansion.
pub fn linear_guess(tangent: &TangentData, sys: &RichardsonSystem, delta_g: f64) -> Result<LinearGuess> {
    let point = &tangent.point;
    let mut warnings = Vec::new();
    if delta_g.abs() > guess_radius(point.g_c) {
        warnings.push(format!(
            "|delta_g| = {:.3e} exceeds the guess radius {:.3e}",
            delta_g.abs(),
            guess_radius(point.g_c)
        ));
    }
    let eta_k = sys.eta()[point.k];
    let s = PowerSums { s: point.chi.iter().map(|c| tangent.ds1_dg * c * delta_g).collect(), k_ref: point.k };
    let inv = invert_power_sums(&s, point.m_k, eta_k)?;
    if inv.condition > ILL_CONDITIONED {
        warnings.push(format!("power-sum inversion condition {:.3e}", inv.condition));
    }
    let mut cluster = inv.energies;
    cluster.sort_by(|a, b| b.im.total_cmp(&a.im).then(a.re.total_cmp(&b.re)));
    let mut values = vec![Complex64::new(0.0, 0.0); point.num_pairs()];
    for (slot, z) in point.members.iter().zip(cluster) {
        values[*slot] = z;
    }
    for ((slot, e), de) in point.noncluster_slots().into_iter().zip(&point.e_noncluster).zip(&tangent.de_dg) {
        values[slot] = e + de * delta_g;
    }
    symmetrize(&mut values);
    for w in &warnings {
        log::debug!("{w}");
    }
    Ok(LinearGuess {
        state: PairEnergies::new(values, point.origin.clone(), point.g_c + delta_g),
        condition: inv.condition,
        warnings,
    })
}

/// A state expressed in the regular coordinates of a collapse: power sums
/// of the cluster and the remaining energies, each matched to the reference.
#[derive(Debug, Clone)]
pub struct CollapseCoordinates {
    pub s: Vec<f64>,
    pub e_noncluster: Vec<Complex64>,
}

/// Power sums `S_1..=S_p_max` of the `m_k` energies nearest `2 eta_k` and the
/// other energies reordered to best match `reference`.
pub fn collapse_coordinates(
    values: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
    p_max: usize,
    reference: &[Complex64],
) -> Result<CollapseCoordinates> {
    let center = Complex64::new(2.0 * sys.eta()[k], 0.0);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| (values[a] - center).norm().total_cmp(&(values[b] - center).norm()));
    let cluster: Vec<Complex64> = order[..m_k].iter().map(|&i| values[i]).collect();
    let rest: Vec<Complex64> = order[m_k..].iter().map(|&i| values[i]).collect();
    let s = power_sums(&cluster, sys.eta()[k], k, p_max)?.s;
    Ok(CollapseCoordinates { s, e_noncluster: match_to(&rest, reference) })
}

/// Greedy nearest matching of `values` onto the order of `reference`.
pub fn match_to(values: &[Complex64], reference: &[Complex64]) -> Vec<Complex64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(values.len() * reference.len());
    for (i, v) in values.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            pairs.push(((v - r).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = vec![Complex64::new(f64::NAN, f64::NAN); reference.len()];
    let mut used_v = vec![false; values.len()];
    let mut used_r = vec![false; reference.len()];
    for (_, i, j) in pairs {
        if !used_v[i] && !used_r[j] {
            out[j] = values[i];
            used_v[i] = true;
            used_r[j] = true;
        }
    }
    out
}

/// Distance between a converged state and the linear prediction, in
/// collapse coordinates: `(max |dS_p|, max |de|)`.
pub fn guess_error(
    state: &[Complex64],
    tangent: &TangentData,
    sys: &RichardsonSystem,
    delta_g: f64,
) -> Result<(f64, f64)> {
    let point = &tangent.point;
    let predicted_e: Vec<Complex64> =
        point.e_noncluster.iter().zip(&tangent.de_dg).map(|(e, d)| e + d * delta_g).collect();
    let coords = collapse_coordinates(state, sys, point.k, point.m_k, point.m_k, &predicted_e)?;
    let ds = coords.s.iter().zip(&point.chi).map(|(s, c)| (s - tangent.ds1_dg * c * delta_g).abs()).fold(0.0, f64::max);
    let de = coords.e_noncluster.iter().zip(&predicted_e).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok((ds, de))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OccupationMap;

    #[test]
    fn b_matrix_structure() {
        let p = [0.5, -0.25, 0.125, 0.1, 0.2];
        let b = b_matrix(0.1, &p, 2);
        assert_eq!(b.nrows(), 4);
        assert_eq!(b.column(0).iter().copied().fold(0.0, f64::max), 0.0);
        assert!((b[(1, 1)] - 1.2).abs() < 1e-15);
        assert!((b[(2, 1)] - -0.2 * (3.0 - 3.0)).abs() < 1e-15);
        assert!((b[(3, 2)] - -0.2 * (3.0 - 4.0)).abs() < 1e-15);
        assert!((b[(0, 3)] - 0.4 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn delta_zero_guess_is_collapsed() {
        let sys = RichardsonSystem::new(vec![0.0, 1.0, 2.0], vec![-1.5, -0.5, -0.5]);
        let point = CriticalPoint {
            g_c: -0.3,
            k: 0,
            m_k: 4,
            e_noncluster: vec![Complex64::new(2.5, 0.0)],
            origin_noncluster: vec![2],
            members: vec![0, 1, 3, 4],
            origin: vec![0, 0, 2, 1, 1],
            chi: vec![1.0, 0.3, -0.2, 0.1],
            energy: 0.0,
            occupation_label: OccupationMap::new(vec![0, 0, 1]),
        };
        let t = TangentData { ds1_dg: 2.0, de_dg: vec![Complex64::new(1.0, 0.0)], point };
        let g = linear_guess(&t, &sys, 0.0).unwrap();
        assert_eq!(g.state.values[2], Complex64::new(2.5, 0.0));
        for &slot in &[0, 1, 3, 4] {
            assert_eq!(g.state.values[slot], Complex64::new(0.0, 0.0));
        }
        assert_eq!(g.state.origin, vec![0, 0, 2, 1, 1]);
        let g = linear_guess(&t, &sys, 1e-3).unwrap();
        let s = power_sums(&[g.state.values[0], g.state.values[1], g.state.values[3], g.state.values[4]], 0.0, 0, 4)
            .unwrap();
        for p in 0..4 {
            assert!((s.s[p] - 2.0 * t.point.chi[p] * 1e-3).abs() < 1e-12);
        }
        assert!((g.state.values[2] - Complex64::new(2.501, 0.0)).norm() < 1e-15);
    }
}
