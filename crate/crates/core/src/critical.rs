//! Critical couplings: the determinant condition on the cluster matrix
//! together with the deflated equations for the remaining pair energies.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cluster::{chi_ratios, cluster_matrix, default_cluster_size, pn_coefficients};
use crate::continuation::{advance, StepControl, StepOutcome};
use crate::error::{Error, Result};
use crate::linalg::{complex_adjugate, complex_determinant, scaled_determinant, solve_complex};
use crate::model::{OccupationMap, PairingProblem};
use crate::solver::{
    inf_norm, init_weak_coupling, jacobian_unchecked, newton_solve, residuals, rounding_floor, symmetrize,
    PairEnergies, RichardsonSystem, REALITY_TOL,
};

/// Bound on the scaled determinant and the deflated residuals at a critical point.
pub const CRITICAL_TOL: f64 = 1e-10;

/// Default grid density per unit of coupling.
pub const GRID_PER_UNIT: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub g_c: f64,
    /// 0-based level index.
    pub k: usize,
    pub m_k: usize,
    pub e_noncluster: Vec<Complex64>,
    /// Level of origin of each non-cluster energy.
    pub origin_noncluster: Vec<usize>,
    /// Slots of the cluster energies in the full state, ascending.
    pub members: Vec<usize>,
    /// Level of origin of the full state, slot by slot.
    pub origin: Vec<usize>,
    pub chi: Vec<f64>,
    pub energy: f64,
    pub occupation_label: OccupationMap,
}

impl CriticalPoint {
    pub fn num_pairs(&self) -> usize {
        self.m_k + self.e_noncluster.len()
    }

    /// Slots of the non-cluster energies in the full state, ascending.
    pub fn noncluster_slots(&self) -> Vec<usize> {
        (0..self.num_pairs()).filter(|i| !self.members.contains(i)).collect()
    }
}

/// Which state a critical point belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BranchSpec {
    /// A full Richardson branch identified by its weak-coupling occupation;
    /// collapses are discovered while continuing it.
    Full(OccupationMap),
    /// A deflated branch, `M - M_k` pairs started at weak coupling from the
    /// given occupation with level `k` carrying the pinned cluster.
    Deflated(OccupationMap),
}

#[derive(Debug, Clone)]
pub struct CriticalOptions {
    /// Grid step of the determinant scan.
    pub grid_step: f64,
    /// Starting coupling magnitude; `None` uses `1e-4 x` mean level spacing.
    pub g_init: Option<f64>,
    pub polish_iterations: usize,
    pub bisection_iterations: usize,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        CriticalOptions {
            grid_step: 1.0 / GRID_PER_UNIT,
            g_init: None,
            polish_iterations: 50,
            bisection_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScanResult {
    pub points: Vec<CriticalPoint>,
    /// Set when the branch could not be followed over the whole range.
    pub truncated: Option<String>,
    /// Roots rejected because the polished solution is not real.
    pub complex_discarded: usize,
}

/// Deflated residuals: the Richardson residuals of the non-cluster energies
/// with `m_k` energies pinned at `2 eta_k`.
pub fn deflated_residuals(
    g: f64,
    e: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
) -> Result<Vec<Complex64>> {
    residuals(e, &sys.deflate(k, m_k), g)
}

/// Cluster matrix at `(g, e_noncluster)`.
pub fn cluster_matrix_at(
    g: f64,
    e_noncluster: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
) -> Result<DMatrix<f64>> {
    let pn = pn_coefficients(sys, k, e_noncluster, m_k.saturating_sub(1))?;
    Ok(cluster_matrix(g, &pn, m_k))
}

/// Determinant of the cluster matrix over the product of its row norms.
pub fn scaled_cluster_determinant(
    g: f64,
    e_noncluster: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
) -> Result<f64> {
    Ok(scaled_determinant(&cluster_matrix_at(g, e_noncluster, sys, k, m_k)?))
}

/// Scaled determinant followed by the deflated residuals.
pub fn critical_residuals(
    g: f64,
    e_noncluster: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
) -> Result<(f64, Vec<Complex64>)> {
    let det = scaled_cluster_determinant(g, e_noncluster, sys, k, m_k)?;
    Ok((det, deflated_residuals(g, e_noncluster, sys, k, m_k)?))
}

fn resolve_m_k(sys: &RichardsonSystem, k: usize, m_k: Option<usize>) -> Result<usize> {
    if k >= sys.num_levels() {
        return Err(Error::InvalidArgument(format!("level {k} out of range")));
    }
    match m_k {
        Some(0) => Err(Error::InvalidArgument("cluster size must be positive".into())),
        Some(m) => Ok(m),
        None => default_cluster_size(sys.d()[k]),
    }
}

/// Cluster matrix with complex `P_n`, holomorphic in the energies.
fn complex_cluster_matrix(g: Complex64, p: &[Complex64], m_k: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(m_k, m_k, |r, c| {
        if c == r {
            1.0 + 4.0 * g * p[0]
        } else if c + 1 == r {
            -2.0 * g * (m_k - r) as f64
        } else if c > r {
            4.0 * g * p[c - r]
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

fn complex_pn(sys: &RichardsonSystem, k: usize, e: &[Complex64], n_max: usize) -> Vec<Complex64> {
    let two_eta_k = 2.0 * sys.eta()[k];
    (0..=n_max)
        .map(|n| {
            let mut v = Complex64::new(0.0, 0.0);
            for (j, (&eta, &d)) in sys.eta().iter().zip(sys.d()).enumerate() {
                if j != k {
                    v += d / (two_eta_k - 2.0 * eta).powi(n as i32 + 1);
                }
            }
            for &eb in e {
                v += 1.0 / (two_eta_k - eb).powu(n as u32 + 1);
            }
            v
        })
        .collect()
}

/// Residual vector and Jacobian of the coupled system in the unknowns
/// `(g, e_noncluster)`. The determinant row is divided by `scale`.
fn coupled_system(
    g: f64,
    e: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
    scale: f64,
) -> (Vec<Complex64>, DMatrix<Complex64>) {
    let n = e.len();
    let defl = sys.deflate(k, m_k);
    let gc = Complex64::new(g, 0.0);
    let p = complex_pn(sys, k, e, m_k.saturating_sub(1));
    let a = complex_cluster_matrix(gc, &p, m_k);
    let det = complex_determinant(&a);
    let adj = complex_adjugate(&a);
    let trace_with = |da: &DMatrix<Complex64>| -> Complex64 {
        let mut t = Complex64::new(0.0, 0.0);
        for i in 0..m_k {
            for j in 0..m_k {
                t += adj[(j, i)] * da[(i, j)];
            }
        }
        t
    };
    let mut f = Vec::with_capacity(n + 1);
    let mut jac = DMatrix::zeros(n + 1, n + 1);
    f.push(det / scale);
    let da_dg = DMatrix::from_fn(m_k, m_k, |r, c| {
        if c == r {
            4.0 * p[0]
        } else if c + 1 == r {
            Complex64::new(-2.0 * (m_k - r) as f64, 0.0)
        } else if c > r {
            4.0 * p[c - r]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    jac[(0, 0)] = trace_with(&da_dg) / scale;
    let two_eta_k = 2.0 * sys.eta()[k];
    for (b, &eb) in e.iter().enumerate() {
        let inv = 1.0 / (two_eta_k - eb);
        let dp: Vec<Complex64> = (0..m_k).map(|nn| (nn as f64 + 1.0) * inv.powu(nn as u32 + 2)).collect();
        let da =
            DMatrix::from_fn(m_k, m_k, |r, c| if c >= r { 4.0 * gc * dp[c - r] } else { Complex64::new(0.0, 0.0) });
        jac[(0, b + 1)] = trace_with(&da) / scale;
    }
    let r = crate::solver::residuals_unchecked(e, &defl, g);
    let je = jacobian_unchecked(e, &defl, g);
    for a in 0..n {
        f.push(r[a]);
        let mut dr_dg = Complex64::new(0.0, 0.0);
        for (&eta, &d) in defl.eta().iter().zip(defl.d()) {
            dr_dg -= 4.0 * d / (2.0 * eta - e[a]);
        }
        for (b, &eb) in e.iter().enumerate() {
            if b != a {
                dr_dg += 4.0 / (e[a] - eb);
            }
        }
        jac[(a + 1, 0)] = dr_dg;
        for b in 0..n {
            jac[(a + 1, b + 1)] = je[(a, b)];
        }
    }
    (f, jac)
}

fn two_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Newton on the coupled system, started from `(g, e)` and confined to `[lo, hi]`.
fn polish_coupled(
    g0: f64,
    e0: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
    (lo, hi): (f64, f64),
    max_iter: usize,
) -> Option<(f64, Vec<Complex64>)> {
    let a0 = cluster_matrix_at(g0, e0, sys, k, m_k).ok()?;
    let scale: f64 = (0..m_k).map(|i| a0.row(i).norm()).product();
    let defl = sys.deflate(k, m_k);
    let mut g = g0;
    let mut e = e0.to_vec();
    let (mut f, mut jac) = coupled_system(g, &e, sys, k, m_k, scale);
    let mut norm = two_norm(&f);
    for _ in 0..max_iter {
        let det_ok = f[0].norm() * scale <= 1e-3 * CRITICAL_TOL * scale.max(1.0);
        let res_ok = inf_norm(&f[1..]) <= 1e-12f64.max(rounding_floor(&e, &defl, g));
        if det_ok && res_ok {
            return Some((g, e));
        }
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|z| -z));
        let step = solve_complex(jac.clone(), &rhs)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let gt = g + t * step[0].re;
            let mut et: Vec<Complex64> = e.iter().zip(step.iter().skip(1)).map(|(x, d)| x + d * t).collect();
            symmetrize(&mut et);
            if gt.is_finite() && gt >= lo && gt <= hi {
                let (ft, jt) = coupled_system(gt, &et, sys, k, m_k, scale);
                let nt = two_norm(&ft);
                if nt.is_finite() && nt < norm {
                    g = gt;
                    e = et;
                    f = ft;
                    jac = jt;
                    norm = nt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    None
}

/// Bisection on the scaled determinant along the deflated branch.
#[allow(clippy::too_many_arguments)]
fn bisect(
    mut a: (f64, PairEnergies, f64),
    mut b: (f64, PairEnergies, f64),
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
    iterations: usize,
) -> Result<(f64, Vec<Complex64>)> {
    let defl = sys.deflate(k, m_k);
    let (lo0, hi0) = (a.0.min(b.0), a.0.max(b.0));
    for _ in 0..iterations {
        if (b.0 - a.0).abs() <= 4.0 * f64::EPSILON * a.0.abs().max(b.0.abs()) {
            break;
        }
        let gm = 0.5 * (a.0 + b.0);
        let mut seed = a.1.clone();
        seed.g = gm;
        let rep = newton_solve(&seed, &defl)?;
        if !rep.converged {
            return Err(Error::UnresolvedRoot {
                lo: lo0,
                hi: hi0,
                reason: format!("deflated branch lost at g = {gm}"),
            });
        }
        let fm = scaled_cluster_determinant(gm, &rep.final_state.values, sys, k, m_k)?;
        if fm == 0.0 {
            return Ok((gm, rep.final_state.values));
        }
        if fm.signum() == a.2.signum() {
            a = (gm, rep.final_state, fm);
        } else {
            b = (gm, rep.final_state, fm);
        }
    }
    let closer = if a.2.abs() <= b.2.abs() { a } else { b };
    Ok((closer.0, closer.1.values))
}

/// Refines a determinant sign change between two deflated-branch samples.
#[allow(clippy::too_many_arguments)]
pub(crate) fn refine_root(
    a: (f64, PairEnergies, f64),
    b: (f64, PairEnergies, f64),
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
    opts: &CriticalOptions,
) -> Result<(f64, Vec<Complex64>)> {
    let (lo, hi) = (a.0.min(b.0), a.0.max(b.0));
    // secant start
    let g0 = a.0 - a.2 * (b.0 - a.0) / (b.2 - a.2);
    let start = if (g0 - a.0).abs() <= (g0 - b.0).abs() { &a.1 } else { &b.1 };
    let defl = sys.deflate(k, m_k);
    let mut seed = start.clone();
    seed.g = g0;
    if let Ok(rep) = newton_solve(&seed, &defl) {
        if rep.converged {
            if let Some(root) =
                polish_coupled(g0, &rep.final_state.values, sys, k, m_k, (lo, hi), opts.polish_iterations)
            {
                return Ok(root);
            }
        }
    }
    log::debug!("coupled polish failed in [{lo}, {hi}]; bisecting");
    let (g, e) = bisect(a, b, sys, k, m_k, opts.bisection_iterations)?;
    // final polish from the bisected point
    Ok(polish_coupled(g, &e, sys, k, m_k, (lo, hi), opts.polish_iterations).unwrap_or((g, e)))
}

/// Assembles and validates the record for a solved root.
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_point(
    g_c: f64,
    e_noncluster: Vec<Complex64>,
    origin_noncluster: Vec<usize>,
    members: Vec<usize>,
    origin: Vec<usize>,
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
    occupation_label: OccupationMap,
) -> Result<CriticalPoint> {
    let (det, res) = critical_residuals(g_c, &e_noncluster, sys, k, m_k)?;
    let floor = rounding_floor(&e_noncluster, &sys.deflate(k, m_k), g_c);
    if det.abs() > CRITICAL_TOL || inf_norm(&res) > CRITICAL_TOL.max(floor) {
        return Err(Error::UnresolvedRoot {
            lo: g_c,
            hi: g_c,
            reason: format!("residuals after polish: det {det:.3e}, equations {:.3e}", inf_norm(&res)),
        });
    }
    let sum: Complex64 = e_noncluster.iter().sum();
    let scale = e_noncluster.iter().map(|z| z.norm()).sum::<f64>().max(1.0);
    if sum.im.abs() > REALITY_TOL * scale {
        return Err(Error::Consistency(format!("non-cluster energies sum to complex {sum}")));
    }
    let pn = pn_coefficients(sys, k, &e_noncluster, m_k.saturating_sub(1))?;
    let chi = chi_ratios(g_c, &pn, m_k)?;
    let energy = m_k as f64 * 2.0 * sys.eta()[k] + sum.re;
    Ok(CriticalPoint { g_c, k, m_k, e_noncluster, origin_noncluster, members, origin, chi, energy, occupation_label })
}

fn check_deflated_occupation(problem: &PairingProblem, occ: &OccupationMap, m_k: usize) -> Result<()> {
    if occ.counts.len() != problem.num_levels() {
        return Err(Error::InvalidArgument(format!(
            "occupation has {} entries for {} levels",
            occ.counts.len(),
            problem.num_levels()
        )));
    }
    if occ.total() + m_k != problem.m_pairs() {
        return Err(Error::InvalidArgument(format!(
            "deflated occupation holds {} pairs; expected {} - {m_k}",
            occ.total(),
            problem.m_pairs()
        )));
    }
    Ok(())
}

/// Start of a deflated branch at weak coupling on the side of `direction`.
fn deflated_start(
    problem: &PairingProblem,
    occ: &OccupationMap,
    k: usize,
    m_k: usize,
    direction: f64,
    opts: &CriticalOptions,
) -> Result<PairEnergies> {
    let sys = RichardsonSystem::from_problem(problem);
    let defl = sys.deflate(k, m_k);
    let g_init = opts.g_init.unwrap_or(1e-4 * problem.mean_spacing()).abs() * direction.signum();
    let mut start = init_weak_coupling(&defl, occ, g_init)?;
    let rep = newton_solve(&start, &defl)?;
    if rep.converged {
        start = rep.final_state;
    }
    Ok(start)
}

/// Follows the deflated branch over `[g_from, g_to]` on a uniform grid and
/// refines every determinant sign change.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_deflated_branch(
    sys: &RichardsonSystem,
    start: PairEnergies,
    g_to: f64,
    k: usize,
    m_k: usize,
    grid_step: f64,
    opts: &CriticalOptions,
    mut found: impl FnMut(f64, Vec<Complex64>, &PairEnergies) -> Result<bool>,
) -> Result<Option<String>> {
    let defl = sys.deflate(k, m_k);
    let direction = (g_to - start.g).signum();
    let ctrl = StepControl { max_step: grid_step, ..StepControl::default() };
    let mut prev = start.clone();
    let mut prev_det = scaled_cluster_determinant(prev.g, &prev.values, sys, k, m_k)?;
    let g0 = start.g;
    let mut node = 0usize;
    let mut last_state = start;
    loop {
        if direction * (g_to - last_state.g) <= 0.0 {
            return Ok(None);
        }
        node += 1;
        let mut g_next = g0 + direction * node as f64 * grid_step;
        if direction * (g_next - g_to) > 0.0 {
            g_next = g_to;
        }
        let outcome = advance(&last_state, &defl, g_next, &ctrl, None)?;
        let state = match outcome {
            StepOutcome::Reached(s) => s,
            StepOutcome::Stalled(s) => {
                return Ok(Some(format!("deflated branch lost near g = {:.6}", s.g)));
            }
        };
        let det = scaled_cluster_determinant(state.g, &state.values, sys, k, m_k)?;
        if det == 0.0 || det.signum() != prev_det.signum() {
            let (g_c, e) =
                refine_root((prev.g, prev.clone(), prev_det), (state.g, state.clone(), det), sys, k, m_k, opts)?;
            if !found(g_c, e, &state)? {
                return Ok(None);
            }
        }
        prev = state.clone();
        prev_det = det;
        last_state = state;
    }
}

/// Roots of the determinant along a deflated branch within `bracket`.
pub fn solve_critical(
    problem: &PairingProblem,
    k: usize,
    m_k: Option<usize>,
    bracket: (f64, f64),
    branch: &OccupationMap,
) -> Result<Vec<CriticalPoint>> {
    let opts = CriticalOptions::default();
    let res = scan_deflated(problem, k, m_k, bracket, branch, &opts)?;
    if let Some(reason) = res.truncated {
        if res.points.is_empty() {
            return Err(Error::UnresolvedRoot { lo: bracket.0, hi: bracket.1, reason });
        }
    }
    Ok(res.points)
}

fn scan_deflated(
    problem: &PairingProblem,
    k: usize,
    m_k: Option<usize>,
    range: (f64, f64),
    occ: &OccupationMap,
    opts: &CriticalOptions,
) -> Result<ScanResult> {
    let sys = RichardsonSystem::from_problem(problem);
    let m_k = resolve_m_k(&sys, k, m_k)?;
    check_deflated_occupation(problem, occ, m_k)?;
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument("coupling range must be finite".into()));
    }
    let mut out = ScanResult::default();
    let members: Vec<usize> = (0..m_k).collect();
    let mut origin = vec![k; m_k];
    let mut origin_nc = Vec::new();
    for (j, &c) in occ.counts.iter().enumerate() {
        origin_nc.extend(std::iter::repeat_n(j, c));
    }
    origin.extend(origin_nc.iter().copied());
    for direction in [-1.0, 1.0] {
        // part of the range on this side of zero
        let (near, far) = if direction < 0.0 { (hi.min(0.0), lo) } else { (lo.max(0.0), hi) };
        if direction * (far - near) <= 0.0 || far == 0.0 {
            continue;
        }
        let start = deflated_start(problem, occ, k, m_k, direction, opts)?;
        let mut points = Vec::new();
        let mut complex = 0;
        let truncated = scan_deflated_branch(&sys, start, far, k, m_k, opts.grid_step, opts, |g_c, e, _| {
            if direction * (g_c - near) < 0.0 {
                return Ok(true);
            }
            match build_point(g_c, e, origin_nc.clone(), members.clone(), origin.clone(), &sys, k, m_k, occ.clone()) {
                Ok(p) => points.push(p),
                Err(Error::Consistency(_)) => complex += 1,
                Err(err) => return Err(err),
            }
            Ok(true)
        })?;
        out.points.extend(points);
        out.complex_discarded += complex;
        if let Some(t) = truncated {
            log::debug!("{t}");
            out.truncated = Some(t);
        }
    }
    out.points.sort_by(|a, b| a.g_c.total_cmp(&b.g_c));
    Ok(out)
}

/// All critical couplings of level `k` on a branch within `g_range`.
pub fn scan_critical(
    problem: &PairingProblem,
    k: usize,
    m_k: Option<usize>,
    g_range: (f64, f64),
    branch: &BranchSpec,
    opts: &CriticalOptions,
) -> Result<ScanResult> {
    match branch {
        BranchSpec::Deflated(occ) => scan_deflated(problem, k, m_k, g_range, occ, opts),
        BranchSpec::Full(occ) => {
            let sys = RichardsonSystem::from_problem(problem);
            let m_k = resolve_m_k(&sys, k, m_k)?;
            let mut overrides = crate::continuation::ClusterSizes::default_for(&sys);
            overrides.set(k, m_k);
            let mut res = crate::continuation::discover_critical(problem, occ, g_range, &overrides, opts)?;
            res.points.retain(|p| p.k == k);
            Ok(res)
        }
    }
}

/// Validates a record against its defining equations.
pub fn verify_point(point: &CriticalPoint, problem: &PairingProblem) -> Result<()> {
    let sys = RichardsonSystem::from_problem(problem);
    let (det, res) = critical_residuals(point.g_c, &point.e_noncluster, &sys, point.k, point.m_k)?;
    if det.abs() > CRITICAL_TOL {
        return Err(Error::Consistency(format!("scaled determinant {det:.3e} at g_c = {}", point.g_c)));
    }
    let floor = rounding_floor(&point.e_noncluster, &sys.deflate(point.k, point.m_k), point.g_c);
    if inf_norm(&res) > CRITICAL_TOL.max(floor) {
        return Err(Error::Consistency(format!("deflated residual {:.3e}", inf_norm(&res))));
    }
    Ok(())
}
