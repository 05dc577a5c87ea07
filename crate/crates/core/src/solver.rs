//! Richardson residuals, Jacobian and the damped Newton solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Pole, Result};
use crate::linalg::{monic_roots, solve_complex};
use crate::model::{OccupationMap, PairingProblem};

/// Largest imaginary part tolerated in quantities that must be real.
pub const REALITY_TOL: f64 = 1e-9;

/// Level energies and effective degeneracies entering the equations.
///
/// Unlike [`PairingProblem`] the degeneracies are free real numbers, which
/// lets the same machinery run on deflated systems where a collapsed cluster
/// has been folded into its level.
#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonSystem {
    eta: Vec<f64>,
    d: Vec<f64>,
}

impl RichardsonSystem {
    pub fn new(eta: Vec<f64>, d: Vec<f64>) -> Self {
        assert_eq!(eta.len(), d.len(), "eta and d must have equal length");
        RichardsonSystem { eta, d }
    }

    pub fn from_problem(problem: &PairingProblem) -> Self {
        let eta = problem.levels().iter().map(|l| l.eta).collect();
        let d = problem.levels().iter().map(|l| l.d()).collect();
        RichardsonSystem { eta, d }
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn num_levels(&self) -> usize {
        self.eta.len()
    }

    /// Pins `m_k` pair energies at `2 eta_k`: their interaction with the rest
    /// is absorbed as `d_k -> d_k + m_k`.
    pub fn deflate(&self, k: usize, m_k: usize) -> Self {
        let mut d = self.d.clone();
        d[k] += m_k as f64;
        RichardsonSystem { eta: self.eta.clone(), d }
    }

    /// The single-level system of level `j`.
    pub fn single_level(&self, j: usize) -> Self {
        RichardsonSystem { eta: vec![self.eta[j]], d: vec![self.d[j]] }
    }

    /// Smallest distance between `2 eta_k` and any other `2 eta_j`.
    pub fn level_gap(&self, k: usize) -> f64 {
        self.eta
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &e)| 2.0 * (e - self.eta[k]).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_spacing(&self) -> f64 {
        let n = self.eta.len();
        if n < 2 {
            return 1.0;
        }
        let lo = self.eta.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / (n - 1) as f64
    }
}

/// Pair energies at one coupling, labelled by the level each one leaves from
/// at weak coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEnergies {
    pub values: Vec<Complex64>,
    pub origin: Vec<usize>,
    pub g: f64,
}

impl PairEnergies {
    pub fn new(values: Vec<Complex64>, origin: Vec<usize>, g: f64) -> Self {
        assert_eq!(values.len(), origin.len());
        PairEnergies { values, origin, g }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<Complex64>, g: f64) -> Self {
        PairEnergies { values, origin: self.origin.clone(), g }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub final_state: PairEnergies,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-12, max_iter: 200, max_halvings: 30 }
    }
}

fn check_poles(e: &[Complex64], sys: &RichardsonSystem) -> Result<()> {
    for (a, &ea) in e.iter().enumerate() {
        for (j, &eta) in sys.eta.iter().enumerate() {
            if ea == Complex64::new(2.0 * eta, 0.0) {
                return Err(Error::Singular(Pole::Level { pair: a, level: j }));
            }
        }
        for (b, &eb) in e.iter().enumerate().skip(a + 1) {
            if ea == eb {
                return Err(Error::Singular(Pole::Coincident { a, b }));
            }
        }
    }
    Ok(())
}

/// `R_a = 1 - 4g sum_j d_j/(2 eta_j - e_a) + 4g sum_{b != a} 1/(e_a - e_b)`.
pub fn residuals(e: &[Complex64], sys: &RichardsonSystem, g: f64) -> Result<Vec<Complex64>> {
    check_poles(e, sys)?;
    Ok(residuals_unchecked(e, sys, g))
}

pub(crate) fn residuals_unchecked(e: &[Complex64], sys: &RichardsonSystem, g: f64) -> Vec<Complex64> {
    let four_g = 4.0 * g;
    e.iter()
        .enumerate()
        .map(|(a, &ea)| {
            let mut level_sum = Complex64::new(0.0, 0.0);
            for (&eta, &d) in sys.eta.iter().zip(&sys.d) {
                level_sum += d / (2.0 * eta - ea);
            }
            let mut pair_sum = Complex64::new(0.0, 0.0);
            for (b, &eb) in e.iter().enumerate() {
                if b != a {
                    pair_sum += 1.0 / (ea - eb);
                }
            }
            1.0 - four_g * level_sum + four_g * pair_sum
        })
        .collect()
}

/// Analytic Jacobian `dR_a / de_b`.
pub fn jacobian(e: &[Complex64], sys: &RichardsonSystem, g: f64) -> Result<DMatrix<Complex64>> {
    check_poles(e, sys)?;
    Ok(jacobian_unchecked(e, sys, g))
}

pub(crate) fn jacobian_unchecked(e: &[Complex64], sys: &RichardsonSystem, g: f64) -> DMatrix<Complex64> {
    let m = e.len();
    let four_g = 4.0 * g;
    let mut jac = DMatrix::zeros(m, m);
    for a in 0..m {
        let mut diag = Complex64::new(0.0, 0.0);
        for (&eta, &d) in sys.eta.iter().zip(&sys.d) {
            let x = 2.0 * eta - e[a];
            diag -= four_g * d / (x * x);
        }
        for b in 0..m {
            if b == a {
                continue;
            }
            let diff = e[a] - e[b];
            let w = four_g / (diff * diff);
            jac[(a, b)] = w;
            diag -= w;
        }
        jac[(a, a)] = diag;
    }
    jac
}

pub(crate) fn inf_norm(r: &[Complex64]) -> f64 {
    r.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// First-order effect on the residuals of rounding the pair energies to
/// double precision. Residuals below this cannot be resolved.
pub fn rounding_floor(e: &[Complex64], sys: &RichardsonSystem, g: f64) -> f64 {
    let four_g = 4.0 * g.abs();
    let mut worst: f64 = 0.0;
    for (a, &ea) in e.iter().enumerate() {
        let mut acc = 0.0;
        for (&eta, &d) in sys.eta.iter().zip(&sys.d) {
            acc += four_g * d.abs() * ea.norm().max(2.0 * eta.abs()) / (2.0 * eta - ea).norm_sqr();
        }
        for (b, &eb) in e.iter().enumerate() {
            if b != a {
                acc += four_g * (ea.norm() + eb.norm()) / (ea - eb).norm_sqr();
            }
        }
        worst = worst.max(acc);
    }
    4.0 * f64::EPSILON * worst
}

fn two_norm(r: &[Complex64]) -> f64 {
    r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn all_finite(r: &[Complex64]) -> bool {
    r.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Restores exact conjugate pairing.
///
/// Entries are matched greedily by the distance between `z_a` and
/// `conj(z_b)`; an entry matched with itself is projected onto the real line,
/// a matched pair is replaced by its conjugate-averaged value.
pub fn symmetrize(values: &mut [Complex64]) {
    let n = values.len();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n + 1) / 2);
    for a in 0..n {
        candidates.push((2.0 * values[a].im.abs(), a, a));
        for b in a + 1..n {
            candidates.push(((values[a] - values[b].conj()).norm(), a, b));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut done = vec![false; n];
    let mut remaining = n;
    for (_, a, b) in candidates {
        if remaining == 0 {
            break;
        }
        if done[a] || done[b] {
            continue;
        }
        if a == b {
            values[a] = Complex64::new(values[a].re, 0.0);
            done[a] = true;
            remaining -= 1;
        } else {
            let avg = (values[a] + values[b].conj()) * 0.5;
            values[a] = avg;
            values[b] = avg.conj();
            done[a] = true;
            done[b] = true;
            remaining -= 2;
        }
    }
}

/// Damped Newton iteration on `residuals`, tracking the state in `initial`.
pub fn newton_solve(initial: &PairEnergies, sys: &RichardsonSystem) -> Result<SolveReport> {
    newton_solve_with(initial, sys, &NewtonOptions::default())
}

pub fn newton_solve_with(initial: &PairEnergies, sys: &RichardsonSystem, opts: &NewtonOptions) -> Result<SolveReport> {
    let g = initial.g;
    let mut e = initial.values.clone();
    symmetrize(&mut e);
    check_poles(&e, sys)?;
    let mut r = residuals_unchecked(&e, sys, g);
    let mut norm_inf = inf_norm(&r);
    let mut norm_two = two_norm(&r);
    let mut iterations = 0;
    let report = |e: Vec<Complex64>, converged, iterations, residual_norm| SolveReport {
        converged,
        iterations,
        residual_norm,
        final_state: initial.with_values(e, g),
    };
    if !norm_inf.is_finite() {
        return Ok(report(e, false, 0, f64::INFINITY));
    }
    let target = |e: &[Complex64]| opts.tol.max(rounding_floor(e, sys, g));
    while iterations < opts.max_iter {
        if norm_inf <= target(&e) {
            return Ok(report(e, true, iterations, norm_inf));
        }
        iterations += 1;
        let jac = jacobian_unchecked(&e, sys, g);
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|z| -z));
        let Some(step) = solve_complex(jac, &rhs) else {
            return Ok(report(e, false, iterations, norm_inf));
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial: Vec<Complex64> = e.iter().zip(step.iter()).map(|(x, dx)| x + dx * t).collect();
            symmetrize(&mut trial);
            if check_poles(&trial, sys).is_ok() {
                let rt = residuals_unchecked(&trial, sys, g);
                if all_finite(&rt) {
                    let nt = two_norm(&rt);
                    if nt < norm_two {
                        accepted = Some((trial, rt, nt));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, rt, nt)) => {
                e = trial;
                norm_inf = inf_norm(&rt);
                norm_two = nt;
                r = rt;
            }
            None => {
                let converged = norm_inf <= target(&e);
                return Ok(report(e, converged, iterations, norm_inf));
            }
        }
    }
    let converged = norm_inf <= target(&e);
    Ok(report(e, converged, iterations, norm_inf))
}

/// Largest admissible starting coupling for [`init_weak_coupling`].
pub fn g_init_max(sys: &RichardsonSystem) -> f64 {
    1e-3 * sys.mean_spacing()
}

/// Weak-coupling seed: the pairs of each level solve that level's own
/// equations at `g_small`, started from a conjugate-symmetric circle of
/// radius `|4 g d_j|` around `2 eta_j`.
pub fn init_weak_coupling(sys: &RichardsonSystem, occupation: &OccupationMap, g_small: f64) -> Result<PairEnergies> {
    if occupation.counts.len() != sys.num_levels() {
        return Err(Error::InvalidArgument(format!(
            "occupation has {} entries for {} levels",
            occupation.counts.len(),
            sys.num_levels()
        )));
    }
    let limit = g_init_max(sys);
    if g_small == 0.0 || !g_small.is_finite() || g_small.abs() > limit * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "weak-coupling start {g_small} must be non-zero with magnitude at most {limit}"
        )));
    }
    let mut values = Vec::with_capacity(occupation.total());
    let mut origin = Vec::with_capacity(occupation.total());
    for (j, &m) in occupation.counts.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let center = 2.0 * sys.eta[j];
        let radius = (4.0 * g_small * sys.d[j]).abs().max(f64::EPSILON * center.abs().max(1.0));
        let seed: Vec<Complex64> = if m == 1 {
            vec![Complex64::new(center - 4.0 * g_small * sys.d[j], 0.0)]
        } else {
            (0..m)
                .map(|i| {
                    let theta = std::f64::consts::PI * (2 * i + 1) as f64 / m as f64;
                    Complex64::new(center, 0.0) + Complex64::from_polar(radius, theta)
                })
                .collect()
        };
        let local = sys.single_level(j);
        let mut report = newton_solve(&PairEnergies::new(seed, vec![j; m], g_small), &local)?;
        if !report.converged {
            let fallback = laguerre_seed(m, sys.d[j], g_small).into_iter().map(|x| 2.0 * sys.eta[j] - x).collect();
            report = newton_solve(&PairEnergies::new(fallback, vec![j; m], g_small), &local)?;
        }
        if !report.converged {
            return Err(Error::Initialization { level: j });
        }
        values.extend(report.final_state.values);
        origin.extend(std::iter::repeat_n(j, m));
    }
    Ok(PairEnergies { values, origin, g: g_small })
}

/// Offsets `x = 2 eta - e` solving one level with `m` pairs and degeneracy
/// `d` in isolation: `x = 2 g y` with `y` the roots of the generalized
/// Laguerre polynomial `L_m^{(2d - 1)}`.
fn laguerre_seed(m: usize, d: f64, g: f64) -> Vec<Complex64> {
    let a = 2.0 * d - 1.0;
    // coefficient of y^i: (-1)^i / i! * binom(m + a, m - i)
    let mut coef = vec![0.0; m + 1];
    let mut fact = 1.0;
    for (i, c) in coef.iter_mut().enumerate() {
        if i > 0 {
            fact *= i as f64;
        }
        let binom: f64 = (1..=m - i).map(|t| (a + (i + t) as f64) / t as f64).product();
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        *c = sign * binom / fact;
    }
    let lead = coef[m];
    let monic: Vec<f64> = (0..m).rev().map(|i| coef[i] / lead).collect();
    let mut x: Vec<Complex64> = monic_roots(&monic).into_iter().map(|y| y * (2.0 * g)).collect();
    symmetrize(&mut x);
    x
}

/// Real part of the sum of pair energies.
pub fn total_energy(e: &PairEnergies) -> Result<f64> {
    let sum: Complex64 = e.values.iter().sum();
    let scale = e.values.iter().map(|z| z.norm()).sum::<f64>().max(1.0);
    if sum.im.abs() > REALITY_TOL * scale {
        return Err(Error::Consistency(format!("sum of pair energies has imaginary part {:.3e}", sum.im)));
    }
    Ok(sum.re)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    /// Conjugate-closed grid values with independent noise far below the grid spacing.
    fn noisy_values() -> impl Strategy<Value = (Vec<Complex64>, Vec<Complex64>)> {
        (1usize..=8)
            .prop_flat_map(|n| (Just(n), 0..=n / 2))
            .prop_flat_map(|(n, pairs)| {
                (
                    proptest::sample::subsequence((-5..=5).collect::<Vec<i32>>(), n - 2 * pairs),
                    proptest::sample::subsequence((0..15).collect::<Vec<i32>>(), pairs),
                    proptest::collection::vec((-1e-9f64..1e-9, -1e-9f64..1e-9), n),
                )
            })
            .prop_map(|(reals, pairs, noise)| {
                let mut clean: Vec<Complex64> =
                    reals.iter().map(|&r| Complex64::new(0.3 * f64::from(r), 0.0)).collect();
                for p in pairs {
                    let z = Complex64::new(0.3 * f64::from(p % 5) - 0.6, 0.3 * f64::from(1 + p / 5));
                    clean.push(z);
                    clean.push(z.conj());
                }
                let noisy = clean.iter().zip(&noise).map(|(z, &(a, b))| z + Complex64::new(a, b)).collect();
                (clean, noisy)
            })
    }

    fn sorted(values: &[Complex64]) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = values.iter().map(|z| (z.re, z.im)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        v
    }

    proptest! {
        #[test]
        fn symmetrize_restores_exact_conjugate_closure((clean, noisy) in noisy_values()) {
            let mut v = noisy.clone();
            symmetrize(&mut v);
            let conj: Vec<Complex64> = v.iter().map(|z| z.conj()).collect();
            prop_assert_eq!(sorted(&v), sorted(&conj));
            for ((a, b), c) in v.iter().zip(&noisy).zip(&clean) {
                prop_assert!((a - b).norm() <= 3e-9);
                prop_assert_eq!(a.im == 0.0, c.im == 0.0);
            }
            let mut again = v.clone();
            symmetrize(&mut again);
            prop_assert_eq!(again, v);
        }
    }
}
