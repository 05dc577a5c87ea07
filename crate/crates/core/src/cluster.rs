//! Power-sum coordinates of a collapsing cluster and the cluster matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Pole, Result};
use crate::linalg::{monic_roots, root_condition};
use crate::solver::{RichardsonSystem, REALITY_TOL};

/// Singular-value ratio above which the null space counts as degenerate.
pub const NULL_SPACE_SEPARATION: f64 = 0.1;

/// Membership radius as a fraction of the nearest level gap.
pub const MEMBERSHIP_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub level_index: usize,
    pub size: usize,
    pub members: Vec<usize>,
}

impl ClusterSpec {
    /// Cluster of size `1 - 2 d_k` at level `k`.
    pub fn from_level(sys: &RichardsonSystem, k: usize) -> Result<Self> {
        Ok(ClusterSpec { level_index: k, size: default_cluster_size(sys.d()[k])?, members: Vec::new() })
    }

    pub fn with_size(level_index: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("cluster size must be positive".into()));
        }
        Ok(ClusterSpec { level_index, size, members: Vec::new() })
    }

    /// Indices of the `size` energies closest to `2 eta_k`, provided all of
    /// them lie inside the membership radius.
    pub fn detect(
        sys: &RichardsonSystem,
        k: usize,
        size: usize,
        values: &[Complex64],
        user_radius: Option<f64>,
    ) -> Option<Self> {
        let radius = membership_radius(sys, k, user_radius);
        let center = Complex64::new(2.0 * sys.eta()[k], 0.0);
        let mut order: Vec<(f64, usize)> = values.iter().enumerate().map(|(i, z)| ((z - center).norm(), i)).collect();
        if order.len() < size {
            return None;
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        if order[size - 1].0 >= radius {
            return None;
        }
        let mut members: Vec<usize> = order[..size].iter().map(|&(_, i)| i).collect();
        members.sort_unstable();
        Some(ClusterSpec { level_index: k, size, members })
    }
}

/// `1 - 2 d`, which must be a positive integer.
pub fn default_cluster_size(d: f64) -> Result<usize> {
    let m = 1.0 - 2.0 * d;
    if (m - m.round()).abs() > 1e-12 || m.round() < 1.0 {
        return Err(Error::InvalidArgument(format!("1 - 2d = {m} is not a positive integer")));
    }
    Ok(m.round() as usize)
}

/// `min(0.25 * nearest level gap, user radius)`.
pub fn membership_radius(sys: &RichardsonSystem, k: usize, user_radius: Option<f64>) -> f64 {
    let r = MEMBERSHIP_FRACTION * sys.level_gap(k);
    match user_radius {
        Some(u) => r.min(u),
        None => r,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSums {
    /// `s[p - 1] = S_p`.
    pub s: Vec<f64>,
    pub k_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnCoefficients {
    /// `p[n] = P_n`.
    pub p: Vec<f64>,
    pub k_ref: usize,
}

fn real_part(z: Complex64, scale: f64, what: &str) -> Result<f64> {
    if z.im.abs() > REALITY_TOL * scale.max(1.0) {
        return Err(Error::Consistency(format!("{what} has imaginary part {:.3e}", z.im)));
    }
    Ok(z.re)
}

/// `S_p = sum (2 eta_k - e)^p` for `p = 1..=p_max`.
pub fn power_sums(e_cluster: &[Complex64], eta_k: f64, k_ref: usize, p_max: usize) -> Result<PowerSums> {
    if p_max == 0 {
        return Err(Error::InvalidArgument("p_max must be at least 1".into()));
    }
    let offsets: Vec<Complex64> = e_cluster.iter().map(|e| 2.0 * eta_k - e).collect();
    let mut powers = offsets.clone();
    let mut s = Vec::with_capacity(p_max);
    for p in 1..=p_max {
        let sum: Complex64 = powers.iter().sum();
        let scale: f64 = powers.iter().map(|z| z.norm()).sum();
        s.push(real_part(sum, scale, &format!("S_{p}"))?);
        for (w, x) in powers.iter_mut().zip(&offsets) {
            *w *= x;
        }
    }
    Ok(PowerSums { s, k_ref })
}

/// `P_n = sum_{j != k} d_j / (2 eta_k - 2 eta_j)^{n+1} + sum_b 1 / (2 eta_k - e_b)^{n+1}`.
///
/// `sys` carries the undeflated degeneracies.
pub fn pn_coefficients(
    sys: &RichardsonSystem,
    k: usize,
    e_noncluster: &[Complex64],
    n_max: usize,
) -> Result<PnCoefficients> {
    let two_eta_k = 2.0 * sys.eta()[k];
    let mut inv_x = Vec::with_capacity(e_noncluster.len());
    for (b, e) in e_noncluster.iter().enumerate() {
        let x = two_eta_k - e;
        if x == Complex64::new(0.0, 0.0) {
            return Err(Error::Singular(Pole::Level { pair: b, level: k }));
        }
        inv_x.push(1.0 / x);
    }
    let inv_level: Vec<(f64, f64)> = sys
        .eta()
        .iter()
        .zip(sys.d())
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, (&eta, &d))| (1.0 / (two_eta_k - 2.0 * eta), d))
        .collect();
    let mut p = Vec::with_capacity(n_max + 1);
    let mut level_pow: Vec<f64> = inv_level.iter().map(|&(u, _)| u).collect();
    let mut pair_pow = inv_x.clone();
    for n in 0..=n_max {
        let level: f64 = level_pow.iter().zip(&inv_level).map(|(w, &(_, d))| d * w).sum();
        let pair: Complex64 = pair_pow.iter().sum();
        let scale: f64 = pair_pow.iter().map(|z| z.norm()).sum();
        p.push(level + real_part(pair, scale, &format!("P_{n}"))?);
        for (w, &(u, _)) in level_pow.iter_mut().zip(&inv_level) {
            *w *= u;
        }
        for (w, u) in pair_pow.iter_mut().zip(&inv_x) {
            *w *= u;
        }
    }
    Ok(PnCoefficients { p, k_ref: k })
}

/// Elementary symmetric polynomials `e_0..=e_m` from power sums by Newton's identities.
pub fn elementary_from_power_sums(s: &[f64], m: usize) -> Vec<f64> {
    let mut e = vec![1.0];
    for j in 1..=m {
        let mut acc = 0.0;
        for i in 1..=j {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e[j - i] * s[i - 1];
        }
        e.push(acc / j as f64);
    }
    e
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub energies: Vec<Complex64>,
    /// Relative root sensitivity of the intermediate polynomial.
    pub condition: f64,
}

/// Cluster energies whose power sums about `2 eta_k` are `s.s[..size]`.
pub fn invert_power_sums(s: &PowerSums, size: usize, eta_k: f64) -> Result<Inversion> {
    if s.s.len() < size {
        return Err(Error::InvalidArgument(format!("{} power sums given for a cluster of {size}", s.s.len())));
    }
    let e = elementary_from_power_sums(&s.s, size);
    // prod (x - x_a) = sum_m (-1)^m e_m x^{size - m}
    let coeffs: Vec<f64> = (1..=size).map(|m| if m % 2 == 1 { -e[m] } else { e[m] }).collect();
    let roots = monic_roots(&coeffs);
    let condition = root_condition(&coeffs, &roots);
    let mut energies: Vec<Complex64> = roots.iter().map(|x| 2.0 * eta_k - x).collect();
    crate::solver::symmetrize(&mut energies);
    Ok(Inversion { energies, condition })
}

/// Cluster matrix: diagonal `1 + 4 g P_0`, subdiagonal `-2 g (M_k + 1 - p)`
/// in 1-based row `p`, and `4 g P_{c - p}` above the diagonal.
pub fn cluster_matrix(g: f64, pn: &PnCoefficients, m_k: usize) -> DMatrix<f64> {
    assert!(pn.p.len() >= m_k, "cluster matrix needs P_0..P_{{m_k-1}}");
    DMatrix::from_fn(m_k, m_k, |r, c| {
        let p = r + 1;
        if c == r {
            1.0 + 4.0 * g * pn.p[0]
        } else if c + 1 == r {
            -2.0 * g * (m_k + 1 - p) as f64
        } else if c > r {
            4.0 * g * pn.p[c - r]
        } else {
            0.0
        }
    })
}

/// Null vector of the cluster matrix normalized to `chi_1 = 1`.
pub fn chi_ratios(g_c: f64, pn: &PnCoefficients, m_k: usize) -> Result<Vec<f64>> {
    if m_k == 1 {
        return Ok(vec![1.0]);
    }
    let a = cluster_matrix(g_c, pn, m_k);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].total_cmp(&sv[j]));
    let (smallest, next) = (sv[order[0]], sv[order[1]]);
    let ratio = if next == 0.0 { f64::INFINITY } else { smallest / next };
    if ratio > NULL_SPACE_SEPARATION {
        return Err(Error::DegenerateNullSpace { ratio });
    }
    let v = v_t.row(order[0]);
    if v[0].abs() < 1e-300 {
        return Err(Error::DegenerateNullSpace { ratio });
    }
    Ok(v.iter().map(|x| x / v[0]).collect())
}
