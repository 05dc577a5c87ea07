//! Exact diagonalization in the seniority-zero pair basis.
//!
//! `H = sum_j 2 eps_j N_j + 2 g sum_{j j'} A+_j A_j'`, the normalization under
//! which the eigenvalues are the sums of pair energies solving
//! `1 - 4g sum_j d_j / (2 eta_j - e_a) + 4g sum_b 1 / (e_a - e_b) = 0`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{OccupationMap, PairingProblem};

pub const DIMENSION_GUARD: usize = 20_000;

/// Pair occupation per level.
pub type PairBasisState = OccupationMap;

/// Number of ways to place `m` pairs given per-level capacities.
pub fn basis_dimension(capacity: &[usize], m: usize) -> usize {
    let mut ways = vec![0usize; m + 1];
    ways[0] = 1;
    for &cap in capacity {
        let mut next = vec![0usize; m + 1];
        for (total, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for n in 0..=cap.min(m - total) {
                next[total + n] = next[total + n].saturating_add(w);
            }
        }
        ways = next;
    }
    ways[m]
}

fn capacities(problem: &PairingProblem) -> Result<Vec<usize>> {
    problem
        .levels()
        .iter()
        .map(|l| {
            if l.nu != 0 {
                Err(Error::InvalidArgument("the pair basis is built for seniority zero only".into()))
            } else {
                Ok(l.pair_capacity())
            }
        })
        .collect()
}

/// Seniority-zero basis states in lexicographic order.
pub fn pair_basis(problem: &PairingProblem) -> Result<Vec<PairBasisState>> {
    let cap = capacities(problem)?;
    let m = problem.m_pairs();
    let dim = basis_dimension(&cap, m);
    if dim > DIMENSION_GUARD {
        return Err(Error::DimensionGuard { dimension: dim, limit: DIMENSION_GUARD });
    }
    let mut out = Vec::with_capacity(dim);
    let mut counts = vec![0usize; cap.len()];
    fill(&cap, 0, m, &mut counts, &mut out);
    Ok(out)
}

fn fill(cap: &[usize], j: usize, left: usize, counts: &mut Vec<usize>, out: &mut Vec<PairBasisState>) {
    if j == cap.len() {
        if left == 0 {
            out.push(OccupationMap::new(counts.clone()));
        }
        return;
    }
    let room: usize = cap[j + 1..].iter().sum();
    let lo = left.saturating_sub(room);
    for n in lo..=cap[j].min(left) {
        counts[j] = n;
        fill(cap, j + 1, left - n, counts, out);
    }
    counts[j] = 0;
}

/// Hamiltonian matrix at coupling `g` in the basis of [`pair_basis`].
pub fn hamiltonian(problem: &PairingProblem, g: f64) -> Result<(Vec<PairBasisState>, DMatrix<f64>)> {
    let basis = pair_basis(problem)?;
    let cap = capacities(problem)?;
    let eps: Vec<f64> = problem.levels().iter().map(|l| l.eta).collect();
    let index: std::collections::HashMap<&[usize], usize> =
        basis.iter().enumerate().map(|(i, s)| (s.counts.as_slice(), i)).collect();
    let dim = basis.len();
    let mut h = DMatrix::zeros(dim, dim);
    let mut moved = vec![0usize; cap.len()];
    for (col, state) in basis.iter().enumerate() {
        let n = &state.counts;
        let mut diag = 0.0;
        for j in 0..n.len() {
            let (nj, pj) = (n[j] as f64, cap[j] as f64);
            diag += 2.0 * eps[j] * nj + 2.0 * g * nj * (pj - nj + 1.0);
        }
        h[(col, col)] = diag;
        // move one pair from `from` to `to`
        for from in 0..n.len() {
            if n[from] == 0 {
                continue;
            }
            for to in 0..n.len() {
                if to == from || n[to] == cap[to] {
                    continue;
                }
                moved.copy_from_slice(n);
                moved[from] -= 1;
                moved[to] += 1;
                let row = index[moved.as_slice()];
                let (nf, pf) = (n[from] as f64, cap[from] as f64);
                let (nt, pt) = (n[to] as f64, cap[to] as f64);
                h[(row, col)] = 2.0 * g * ((nt + 1.0) * (pt - nt)).sqrt() * (nf * (pf - nf + 1.0)).sqrt();
            }
        }
    }
    Ok((basis, h))
}

/// All eigenvalues at coupling `g`, ascending.
pub fn exact_spectrum(problem: &PairingProblem, g: f64) -> Result<Vec<f64>> {
    let (_, h) = hamiltonian(problem, g)?;
    let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Distance from `energy` to the nearest eigenvalue.
pub fn nearest_eigenvalue(spectrum: &[f64], energy: f64) -> f64 {
    spectrum.iter().map(|e| (e - energy).abs()).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::monic_roots;
    use crate::model::{build_lattice_model, Level};

    #[test]
    fn free_spectrum() {
        let p = build_lattice_model(2, 2).unwrap();
        let basis = pair_basis(&p).unwrap();
        let mut expect: Vec<f64> = basis.iter().map(|s| s.unperturbed_energy(&p)).collect();
        expect.sort_by(f64::total_cmp);
        assert_eq!(exact_spectrum(&p, 0.0).unwrap(), expect);
    }

    #[test]
    fn one_pair_two_levels_matches_quadratic() {
        // 1 = 4 g [d0 / (0 - e) + d1 / (2 - e)], d = -1/2
        let levels = vec![Level::new(0.0, 2, 0).unwrap(), Level::new(1.0, 2, 0).unwrap()];
        let p = PairingProblem::new(levels, 1).unwrap();
        for &g in &[-0.3, 0.1, 0.7] {
            let spec = exact_spectrum(&p, g).unwrap();
            let mut roots: Vec<f64> = monic_roots(&[-(2.0 + 4.0 * g), 4.0 * g]).iter().map(|z| z.re).collect();
            roots.sort_by(f64::total_cmp);
            for (a, b) in spec.iter().zip(&roots) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_and_complete() {
        let p = build_lattice_model(2, 3).unwrap();
        let (basis, h) = hamiltonian(&p, -0.37).unwrap();
        assert_eq!(basis.len(), basis_dimension(&[1, 2, 1], 3));
        assert!((&h - h.transpose()).amax() <= 1e-14);
        assert_eq!(exact_spectrum(&p, -0.37).unwrap().len(), basis.len());
    }

    #[test]
    fn guard_refuses_large_bases() {
        let p = build_lattice_model(6, 18).unwrap();
        match exact_spectrum(&p, 0.1) {
            Err(Error::DimensionGuard { dimension, limit }) => {
                assert!(dimension > limit);
            }
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_counts() {
        assert_eq!(basis_dimension(&[1, 2, 1], 2), 4);
        assert_eq!(basis_dimension(&[3], 2), 1);
        assert_eq!(basis_dimension(&[1, 1], 3), 0);
    }
}
