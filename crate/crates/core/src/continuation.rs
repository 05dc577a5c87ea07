//! Parameter continuation in `g`, with tangent restarts across collapses.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cluster::{default_cluster_size, membership_radius, power_sums};
use crate::critical::{build_point, scan_deflated_branch, CriticalOptions, CriticalPoint, ScanResult};
use crate::error::{Error, Result};
use crate::model::{OccupationMap, PairingProblem};
use crate::solver::{
    init_weak_coupling, newton_solve, newton_solve_with, total_energy, NewtonOptions, PairEnergies, RichardsonSystem,
    SolveReport,
};
use crate::tangent::{collapse_coordinates, guess_error, linear_guess, match_to, solve_tangent};

/// Default half-width of the window around a critical coupling that is jumped.
pub const DEFAULT_CRITICAL_WINDOW: f64 = 5e-3;

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Newton iteration cap per step.
    pub newton_max_iter: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { initial_step: 1e-3, min_step: 1e-6, max_step: 2e-2, newton_max_iter: 60 }
    }
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Reached(PairEnergies),
    Stalled(PairEnergies),
}

/// Smallest distance from `e[a]` to another energy or to a pole.
fn separation(e: &[Complex64], a: usize, sys: &RichardsonSystem) -> f64 {
    let mut s = f64::INFINITY;
    for (b, z) in e.iter().enumerate() {
        if b != a {
            s = s.min((e[a] - z).norm());
        }
    }
    for &eta in sys.eta() {
        s = s.min((e[a] - 2.0 * eta).norm());
    }
    s
}

/// Adaptive predictor-corrector stepping on one system.
pub(crate) struct Stepper<'a> {
    sys: &'a RichardsonSystem,
    ctrl: StepControl,
    pub state: PairEnergies,
    prev: Option<PairEnergies>,
    h: f64,
}

pub(crate) enum Step {
    Accepted(SolveReport),
    Failed,
}

impl<'a> Stepper<'a> {
    pub fn new(sys: &'a RichardsonSystem, state: PairEnergies, ctrl: StepControl, h: f64) -> Self {
        let h = h.clamp(ctrl.min_step, ctrl.max_step);
        Stepper { sys, ctrl, state, prev: None, h }
    }

    /// One accepted step towards `g_target`, or failure once the step
    /// would fall below the minimum.
    pub fn step_toward(&mut self, g_target: f64) -> Result<Step> {
        let g = self.state.g;
        let direction = (g_target - g).signum();
        let opts = NewtonOptions { max_iter: self.ctrl.newton_max_iter, ..NewtonOptions::default() };
        loop {
            let remaining = (g_target - g).abs();
            let h = self.h.min(remaining);
            let g_new = if h == remaining { g_target } else { g + direction * h };
            let predicted: Vec<Complex64> = match &self.prev {
                Some(p) if p.g != g => {
                    let ratio = (g_new - g) / (g - p.g);
                    self.state.values.iter().zip(&p.values).map(|(x, y)| x + (x - y) * ratio).collect()
                }
                _ => self.state.values.clone(),
            };
            let seed = self.state.with_values(predicted, g_new);
            let report = match newton_solve_with(&seed, self.sys, &opts) {
                Ok(r) => Some(r),
                Err(Error::Singular(_)) => None,
                Err(e) => return Err(e),
            };
            let ok = report.as_ref().is_some_and(|r| r.converged && self.guard(&seed.values, &r.final_state.values));
            if ok {
                let report = report.expect("checked above");
                if report.iterations > 12 {
                    self.h = (self.h * 0.5).max(self.ctrl.min_step);
                } else if report.iterations < 4 {
                    self.h = (self.h * 2.0).min(self.ctrl.max_step);
                }
                self.prev = Some(std::mem::replace(&mut self.state, report.final_state.clone()));
                return Ok(Step::Accepted(report));
            }
            if self.h <= self.ctrl.min_step {
                return Ok(Step::Failed);
            }
            self.h = (self.h * 0.5).max(self.ctrl.min_step);
        }
    }

    /// Rejects corrections large against the local spacing: a sign of a jump
    /// to another solution.
    fn guard(&self, predicted: &[Complex64], solved: &[Complex64]) -> bool {
        (0..predicted.len())
            .all(|a| (solved[a] - predicted[a]).norm() <= 0.5 * separation(&self.state.values, a, self.sys))
    }

    /// Continues to `g_target`.
    pub fn run_to(&mut self, g_target: f64) -> Result<bool> {
        while self.state.g != g_target {
            if let Step::Failed = self.step_toward(g_target)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Continues `state` on `sys` to `g_target` with adaptive steps; `h` is the
/// first step size.
pub fn advance(
    state: &PairEnergies,
    sys: &RichardsonSystem,
    g_target: f64,
    ctrl: &StepControl,
    h: Option<f64>,
) -> Result<StepOutcome> {
    let mut stepper = Stepper::new(sys, state.clone(), *ctrl, h.unwrap_or(ctrl.initial_step));
    if stepper.run_to(g_target)? {
        Ok(StepOutcome::Reached(stepper.state))
    } else {
        Ok(StepOutcome::Stalled(stepper.state))
    }
}

/// Cluster size per level; zero disables collapse detection at that level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterSizes(pub Vec<usize>);

impl ClusterSizes {
    pub fn default_for(sys: &RichardsonSystem) -> Self {
        ClusterSizes(sys.d().iter().map(|&d| default_cluster_size(d).unwrap_or(0)).collect())
    }

    pub fn set(&mut self, k: usize, m_k: usize) {
        self.0[k] = m_k;
    }

    pub fn get(&self, k: usize) -> usize {
        self.0[k]
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub step: StepControl,
    /// Half-width of the window around a known `g_c` that is never entered
    /// by ordinary steps.
    pub critical_window: f64,
    /// Collapse radius as a fraction of the nearest level gap.
    pub collapse_fraction: f64,
    /// Critical points available before the sweep.
    pub known: Vec<CriticalPoint>,
    /// Locate unregistered collapses on the fly.
    pub discover: bool,
    pub cluster_sizes: Option<ClusterSizes>,
    pub critical: CriticalOptions,
    /// Starting coupling magnitude; `None` uses `1e-4 x` mean level spacing.
    pub g_init: Option<f64>,
    /// Coupling window scanned on the deflated branch after a detection.
    pub discovery_window: f64,
    /// Distance from `g_c` at which the approach is checked against the
    /// linear prediction.
    pub verify_offset: f64,
    /// Abort when the energy jumps by more than this multiple of the local trend.
    pub jump_factor: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            step: StepControl::default(),
            critical_window: DEFAULT_CRITICAL_WINDOW,
            collapse_fraction: 0.25,
            known: Vec::new(),
            discover: true,
            cluster_sizes: None,
            critical: CriticalOptions::default(),
            g_init: None,
            discovery_window: 0.05,
            verify_offset: 1e-4,
            jump_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub g: f64,
    pub state: PairEnergies,
    pub energy: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepStatus {
    Completed,
    Truncated(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPath {
    pub samples: Vec<Sample>,
    pub crossings: Vec<CriticalPoint>,
    pub status: SweepStatus,
    pub branch: OccupationMap,
}

impl SweepPath {
    pub fn is_complete(&self) -> bool {
        self.status == SweepStatus::Completed
    }
}

/// Smallest offset from `g_c` at which a restart is attempted.
pub const MIN_RESTART_OFFSET: f64 = 1e-7;

enum Crossed {
    Restart(SolveReport),
    /// The target coincides with the critical point.
    AtCritical(Sample),
}

struct Sweeper<'a> {
    problem: &'a PairingProblem,
    sys: RichardsonSystem,
    opts: &'a SweepOptions,
    sizes: ClusterSizes,
    direction: f64,
    branch: OccupationMap,
    samples: Vec<Sample>,
    crossings: Vec<CriticalPoint>,
    /// Pending critical points, each tried at most once.
    pending: Vec<CriticalPoint>,
    /// Per level, coupling before which no new discovery is attempted.
    suppressed_until: Vec<f64>,
}

impl<'a> Sweeper<'a> {
    fn sample(&self, state: &PairEnergies, report_norm: f64) -> Result<Sample> {
        Ok(Sample { g: state.g, state: state.clone(), energy: total_energy(state)?, residual_norm: report_norm })
    }

    fn cluster_distance(&self, values: &[Complex64], k: usize) -> Option<f64> {
        let m = self.sizes.get(k);
        if m == 0 || m > values.len() {
            return None;
        }
        let center = 2.0 * self.sys.eta()[k];
        let mut d: Vec<f64> = values.iter().map(|z| (z - center).norm()).collect();
        d.sort_by(f64::total_cmp);
        Some(d[m - 1])
    }

    fn cluster_slots(&self, values: &[Complex64], k: usize) -> Vec<usize> {
        let center = 2.0 * self.sys.eta()[k];
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| (values[a] - center).norm().total_cmp(&(values[b] - center).norm()));
        let mut members = order[..self.sizes.get(k)].to_vec();
        members.sort_unstable();
        members
    }

    fn collapse_radius(&self, k: usize) -> f64 {
        self.opts.collapse_fraction / crate::cluster::MEMBERSHIP_FRACTION * membership_radius(&self.sys, k, None)
    }

    /// Looks for a determinant root of level `k` ahead of `from`.
    fn discover(&mut self, from: &PairEnergies, k: usize) -> Result<Option<CriticalPoint>> {
        let m_k = self.sizes.get(k);
        let members = self.cluster_slots(&from.values, k);
        let slots: Vec<usize> = (0..from.len()).filter(|i| !members.contains(i)).collect();
        let seed = PairEnergies::new(
            slots.iter().map(|&i| from.values[i]).collect(),
            slots.iter().map(|&i| from.origin[i]).collect(),
            from.g,
        );
        let defl = self.sys.deflate(k, m_k);
        let rep = newton_solve(&seed, &defl)?;
        if !rep.converged {
            log::debug!("level {k}: deflated seed at g = {} did not converge", from.g);
            return Ok(None);
        }
        let g_end = from.g + self.direction * self.opts.discovery_window;
        let mut found = None;
        let step = self.opts.critical.grid_step.min(self.opts.discovery_window / 20.0);
        let truncated = scan_deflated_branch(
            &self.sys,
            rep.final_state.clone(),
            g_end,
            k,
            m_k,
            step,
            &self.opts.critical,
            |g_c, e, _| {
                let origin_nc = rep.final_state.origin.clone();
                match build_point(
                    g_c,
                    e,
                    origin_nc,
                    members.clone(),
                    from.origin.clone(),
                    &self.sys,
                    k,
                    m_k,
                    self.branch.clone(),
                ) {
                    Ok(p) => {
                        found = Some(p);
                        Ok(false)
                    }
                    Err(Error::Consistency(_)) | Err(Error::DegenerateNullSpace { .. }) => Ok(true),
                    Err(e) => Err(e),
                }
            },
        );
        match truncated {
            Ok(Some(reason)) => log::debug!("level {k}: {reason}"),
            Ok(None) => {}
            Err(Error::UnresolvedRoot { lo, hi, reason }) => {
                log::debug!("level {k}: root in [{lo}, {hi}] unresolved: {reason}")
            }
            Err(e) => return Err(e),
        }
        Ok(found)
    }

    /// Re-expresses a critical point in the slots of the live state.
    fn localize(&self, point: &CriticalPoint, live: &PairEnergies) -> Option<CriticalPoint> {
        if point.num_pairs() != live.len() {
            return None;
        }
        let members = self.cluster_slots(&live.values, point.k);
        if members.len() != point.m_k {
            return None;
        }
        let slots: Vec<usize> = (0..live.len()).filter(|i| !members.contains(i)).collect();
        let live_nc: Vec<Complex64> = slots.iter().map(|&i| live.values[i]).collect();
        let e_noncluster = match_to(&point.e_noncluster, &live_nc);
        let mut local = point.clone();
        local.e_noncluster = e_noncluster;
        local.origin_noncluster = slots.iter().map(|&i| live.origin[i]).collect();
        local.members = members;
        local.origin = live.origin.clone();
        local.occupation_label = self.branch.clone();
        Some(local)
    }

    /// Relative mismatch of `state` against the linear prediction at `delta`.
    fn prediction_mismatch(
        &self,
        state: &[Complex64],
        tangent: &crate::tangent::TangentData,
        delta: f64,
    ) -> Result<f64> {
        let (ds, de) = guess_error(state, tangent, &self.sys, delta)?;
        let chi_max = tangent.point.chi.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        let s_scale = tangent.ds1_dg.abs() * delta.abs() * chi_max;
        let e_scale = tangent.de_dg.iter().fold(0.0f64, |m, d| m.max(d.norm())) * delta.abs();
        Ok((ds / s_scale.max(f64::MIN_POSITIVE)).max(de / (e_scale + 1e-6)))
    }

    /// Crosses `point` starting from `live`, which lies before it. Returns
    /// the restarted state on the far side, or `None` when the point does not
    /// belong to this branch.
    fn cross(&mut self, point: &CriticalPoint, live: &PairEnergies, g_target: f64) -> Result<Option<Crossed>> {
        let Some(local) = self.localize(point, live) else { return Ok(None) };
        let tangent = match solve_tangent(&local, &self.sys) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("tangent at g_c = {}: {e}", point.g_c);
                return Ok(None);
            }
        };
        // the approach must agree with the prediction
        let offset = self.opts.verify_offset.min(0.5 * (point.g_c - live.g).abs());
        let g_v = point.g_c - self.direction * offset;
        let near =
            match advance(live, &self.sys, g_v, &self.opts.step, Some(self.opts.step.min_step.max(offset * 0.1)))? {
                StepOutcome::Reached(s) => s,
                StepOutcome::Stalled(s) => {
                    log::debug!("approach to g_c = {} stalled at {}", point.g_c, s.g);
                    return Ok(None);
                }
            };
        let mismatch = self.prediction_mismatch(&near.values, &tangent, -self.direction * offset)?;
        if mismatch > 0.25 {
            log::debug!("g_c = {} (level {}) rejected: approach mismatch {mismatch:.3e}", point.g_c, point.k + 1);
            return Ok(None);
        }
        let room = self.direction * (g_target - point.g_c);
        if room < MIN_RESTART_OFFSET {
            // the target is the critical point itself
            let sample = self.collapsed_sample(&local)?;
            self.crossings.push(local);
            return Ok(Some(Crossed::AtCritical(sample)));
        }
        // far side, largest offset first
        let mut delta = self.opts.critical_window.min(room);
        while delta >= MIN_RESTART_OFFSET {
            let guess = linear_guess(&tangent, &self.sys, self.direction * delta)?;
            let mut seed = guess.state;
            seed.origin = live.origin.clone();
            if let Ok(rep) = newton_solve_with(&seed, &self.sys, &NewtonOptions { max_iter: 50, ..Default::default() })
            {
                if rep.converged {
                    let m = self.prediction_mismatch(&rep.final_state.values, &tangent, self.direction * delta)?;
                    if m <= 0.25 {
                        self.crossings.push(local.clone());
                        return Ok(Some(Crossed::Restart(rep)));
                    }
                    log::debug!("restart at delta {delta:.1e}: mismatch {m:.3e}");
                }
            }
            delta /= if delta > 1e-3 { 5.0 } else { 10.0 };
        }
        Err(Error::UnresolvedRoot {
            lo: point.g_c,
            hi: point.g_c,
            reason: "no restart on the far side agreed with the linear prediction".into(),
        })
    }

    /// Sample holding the collapsed configuration of `point`; the residual
    /// reported is that of the deflated equations.
    fn collapsed_sample(&self, point: &CriticalPoint) -> Result<Sample> {
        let mut values = vec![Complex64::new(2.0 * self.sys.eta()[point.k], 0.0); point.num_pairs()];
        for (slot, e) in point.noncluster_slots().into_iter().zip(&point.e_noncluster) {
            values[slot] = *e;
        }
        let (_, res) =
            crate::critical::critical_residuals(point.g_c, &point.e_noncluster, &self.sys, point.k, point.m_k)?;
        Ok(Sample {
            g: point.g_c,
            state: PairEnergies::new(values, point.origin.clone(), point.g_c),
            energy: point.energy,
            residual_norm: crate::solver::inf_norm(&res),
        })
    }

    fn check_continuity(&self, next: &Sample) -> Option<String> {
        let n = self.samples.len();
        if n < 3 {
            return None;
        }
        let slope = |a: &Sample, b: &Sample| (b.energy - a.energy) / (b.g - a.g);
        let trend = slope(&self.samples[n - 2], &self.samples[n - 1])
            .abs()
            .max(slope(&self.samples[n - 3], &self.samples[n - 2]).abs());
        let last = &self.samples[n - 1];
        let jump = (next.energy - last.energy).abs();
        if jump > self.opts.jump_factor * trend * (next.g - last.g).abs() + 1e-9 {
            Some(format!("energy jump {jump:.3e} at g = {:.6} exceeds the local trend", next.g))
        } else {
            None
        }
    }

    fn register(&mut self, point: CriticalPoint) {
        log::info!("level {} collapses at g_c = {:.7}", point.k + 1, point.g_c);
        self.pending.push(point);
        let dir = self.direction;
        self.pending.sort_by(|a, b| (dir * a.g_c).total_cmp(&(dir * b.g_c)));
    }

    /// Drops samples at or past `g` in the sweep direction.
    fn rollback_before(&mut self, g: f64) {
        let dir = self.direction;
        while self.samples.len() > 1 && dir * (self.samples.last().expect("non-empty").g - g) >= 0.0 {
            self.samples.pop();
        }
    }

    /// Runs discovery at every level with an eligible cluster candidate.
    fn discover_all(&mut self, prev: &PairEnergies, current: &PairEnergies, require_approach: bool) -> Result<bool> {
        let mut any = false;
        for k in 0..self.sys.num_levels() {
            let (Some(dn), Some(dp)) =
                (self.cluster_distance(&current.values, k), self.cluster_distance(&prev.values, k))
            else {
                continue;
            };
            if self.direction * (current.g - self.suppressed_until[k]) < 0.0 {
                continue;
            }
            if self.pending.iter().any(|p| p.k == k) {
                continue;
            }
            let near = dn < self.collapse_radius(k) || dp < self.collapse_radius(k);
            if !near || (require_approach && dn >= dp) {
                continue;
            }
            match self.discover(prev, k)? {
                Some(p) => {
                    self.register(p);
                    any = true;
                }
                None => self.suppressed_until[k] = prev.g + self.direction * self.opts.discovery_window,
            }
        }
        Ok(any)
    }

    fn run(mut self, g_target: f64) -> Result<SweepPath> {
        let g_init = self.opts.g_init.unwrap_or(1e-4 * self.problem.mean_spacing()).abs() * self.direction;
        let mut state = init_weak_coupling(&self.sys, &self.branch, g_init)?;
        let rep = newton_solve(&state, &self.sys)?;
        if rep.converged {
            state = rep.final_state;
        }
        let norm = crate::solver::inf_norm(&crate::solver::residuals(&state.values, &self.sys, state.g)?);
        self.samples.push(self.sample(&state, norm)?);
        let mut h = g_init.abs();
        let mut restart_index = 0;
        let dir = self.direction;
        let status = loop {
            let current = self.samples.last().expect("non-empty").state.clone();
            log::trace!("sweep at g = {:.9}, h = {h:.3e}, pending {}", current.g, self.pending.len());
            if dir * (g_target - current.g) <= 0.0 {
                break SweepStatus::Completed;
            }
            // drop pending points already behind
            self.pending.retain(|p| dir * (p.g_c - current.g) > 0.0);
            let next = self.pending.first().cloned();
            let mut limit = g_target;
            if let Some(p) = next.filter(|p| dir * (p.g_c - g_target) < 0.0) {
                if dir * (p.g_c - current.g) <= self.opts.critical_window * (1.0 + 1e-9) {
                    self.pending.remove(0);
                    match self.cross(&p, &current, g_target)? {
                        Some(Crossed::Restart(rep)) => {
                            // the collapsed configuration marks the crossing in the path
                            let at = self.collapsed_sample(&p)?;
                            self.samples.push(at);
                            let s = self.sample(&rep.final_state, rep.residual_norm)?;
                            h = (p.g_c - s.g).abs().max(self.opts.step.min_step);
                            self.samples.push(s);
                            restart_index = self.samples.len() - 1;
                        }
                        Some(Crossed::AtCritical(s)) => {
                            self.samples.push(s);
                            break SweepStatus::Completed;
                        }
                        None => {
                            log::debug!("critical point {} not on this branch", p.g_c);
                            self.suppressed_until[p.k] = p.g_c + dir * self.opts.critical_window;
                        }
                    }
                    continue;
                }
                limit = p.g_c - dir * self.opts.critical_window;
            }
            let prev = current.clone();
            let mut stepper = Stepper::new(&self.sys, current, self.opts.step, h);
            if self.samples.len() >= 2 && self.samples.len() - 2 >= restart_index {
                stepper.prev = Some(self.samples[self.samples.len() - 2].state.clone());
            }
            match stepper.step_toward(limit)? {
                Step::Accepted(rep) => {
                    h = stepper.h;
                    let s = self.sample(&rep.final_state, rep.residual_norm)?;
                    if self.opts.discover && self.discover_all(&prev, &rep.final_state, true)? {
                        // resume from before the earliest new point
                        let first = self.pending.first().expect("registered").g_c;
                        if dir * (rep.final_state.g - first) >= 0.0 {
                            self.rollback_before(first);
                            continue;
                        }
                    }
                    if let Some(msg) = self.check_continuity(&s) {
                        break SweepStatus::Truncated(msg);
                    }
                    self.samples.push(s);
                }
                Step::Failed => {
                    if self.opts.discover && self.discover_all(&prev, &prev, false)? {
                        continue;
                    }
                    let hint = if self.opts.discover { "" } else { "; run the critical-point scan first" };
                    break SweepStatus::Truncated(format!("continuation stalled at g = {:.7}{hint}", prev.g));
                }
            }
        };
        Ok(SweepPath { samples: self.samples, crossings: self.crossings, status, branch: self.branch })
    }
}

/// Continues the branch started from `branch` at weak coupling up to `g_target`.
pub fn sweep(
    problem: &PairingProblem,
    branch: &OccupationMap,
    g_target: f64,
    opts: &SweepOptions,
) -> Result<SweepPath> {
    if g_target == 0.0 || !g_target.is_finite() {
        return Err(Error::InvalidArgument("target coupling must be finite and non-zero".into()));
    }
    branch.validate(problem)?;
    let sys = RichardsonSystem::from_problem(problem);
    let sizes = opts.cluster_sizes.clone().unwrap_or_else(|| ClusterSizes::default_for(&sys));
    if sizes.0.len() != sys.num_levels() {
        return Err(Error::InvalidArgument("one cluster size per level required".into()));
    }
    let direction = g_target.signum();
    let mut pending: Vec<CriticalPoint> = opts
        .known
        .iter()
        .filter(|p| direction * p.g_c > 0.0 && direction * (p.g_c - g_target) < 0.0)
        .cloned()
        .collect();
    pending.sort_by(|a, b| (direction * a.g_c).total_cmp(&(direction * b.g_c)));
    let n = sys.num_levels();
    Sweeper {
        problem,
        sys,
        opts,
        sizes,
        direction,
        branch: branch.clone(),
        samples: Vec::new(),
        crossings: Vec::new(),
        pending,
        suppressed_until: vec![0.0; n],
    }
    .run(g_target)
}

/// Critical points met by the branch within `g_range`, all levels.
pub fn discover_critical(
    problem: &PairingProblem,
    branch: &OccupationMap,
    g_range: (f64, f64),
    sizes: &ClusterSizes,
    critical: &CriticalOptions,
) -> Result<ScanResult> {
    let (lo, hi) = (g_range.0.min(g_range.1), g_range.0.max(g_range.1));
    let opts =
        SweepOptions { cluster_sizes: Some(sizes.clone()), critical: critical.clone(), ..SweepOptions::default() };
    let mut out = ScanResult::default();
    let targets = [(lo < 0.0).then_some(lo), (hi > 0.0).then_some(hi)];
    for target in targets.into_iter().flatten() {
        let path = sweep(problem, branch, target, &opts)?;
        out.points.extend(path.crossings.into_iter().filter(|p| p.g_c >= lo && p.g_c <= hi));
        if let SweepStatus::Truncated(msg) = path.status {
            out.truncated = Some(msg);
        }
    }
    out.points.sort_by(|a, b| a.g_c.total_cmp(&b.g_c));
    Ok(out)
}

/// Rows of `(g, Re e_a ...)` with columns ordered by level of origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Real parts of the pair energies along the path, ordered by origin.
pub fn sample_figure_data(path: &SweepPath) -> FigureTable {
    let Some(first) = path.samples.first() else {
        return FigureTable { header: vec!["g".into()], rows: Vec::new() };
    };
    let mut order: Vec<usize> = (0..first.state.len()).collect();
    order.sort_by_key(|&i| (first.state.origin[i], i));
    let mut header = vec!["g".to_string()];
    let mut count = vec![0usize; first.state.origin.iter().max().map_or(0, |m| m + 1)];
    for &i in &order {
        let j = first.state.origin[i];
        count[j] += 1;
        header.push(format!("re_e_l{}_{}", j + 1, count[j]));
    }
    let rows = path
        .samples
        .iter()
        .map(|s| std::iter::once(s.g).chain(order.iter().map(|&i| s.state.values[i].re)).collect())
        .collect();
    FigureTable { header, rows }
}

/// Rows of `(g, S_1 ... S_{p_max})` for the `m_k` energies nearest `2 eta_k`.
pub fn power_sum_table(
    path: &SweepPath,
    problem: &PairingProblem,
    k: usize,
    m_k: usize,
    p_max: usize,
) -> Result<FigureTable> {
    let sys = RichardsonSystem::from_problem(problem);
    let mut header = vec!["g".to_string()];
    header.extend((1..=p_max).map(|p| format!("S{p}")));
    let mut rows = Vec::with_capacity(path.samples.len());
    for s in &path.samples {
        let coords = collapse_coordinates(&s.state.values, &sys, k, m_k, p_max, &[])?;
        rows.push(std::iter::once(s.g).chain(coords.s).collect());
    }
    Ok(FigureTable { header, rows })
}

/// `S_p` of the `m_k` energies of `values` nearest `2 eta_k`.
pub fn cluster_power_sums(
    values: &[Complex64],
    sys: &RichardsonSystem,
    k: usize,
    m_k: usize,
    p_max: usize,
) -> Result<Vec<f64>> {
    let center = 2.0 * sys.eta()[k];
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| (a - center).norm().total_cmp(&(b - center).norm()));
    Ok(power_sums(&sorted[..m_k], sys.eta()[k], k, p_max)?.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::monic_roots;
    use crate::model::Level;

    #[test]
    fn one_pair_matches_closed_form() {
        // 1 = 4 g [d0 / (0 - e) + d1 / (2 - e)] with d = -1/2:
        // e^2 - (2 + 4 g) e + 4 g = 0
        let levels = vec![Level::new(0.0, 2, 0).unwrap(), Level::new(1.0, 2, 0).unwrap()];
        let p = PairingProblem::new(levels, 1).unwrap();
        for target in [-0.3, 0.4] {
            let path = sweep(&p, &OccupationMap::new(vec![1, 0]), target, &SweepOptions::default()).unwrap();
            assert!(path.is_complete());
            for s in &path.samples {
                let g = s.g;
                let roots = monic_roots(&[-(2.0 + 4.0 * g), 4.0 * g]);
                let best = roots.iter().map(|r| (r - s.state.values[0]).norm()).fold(f64::INFINITY, f64::min);
                assert!(best < 1e-10, "g = {g}: {best}");
            }
        }
    }

    #[test]
    fn sweep_rejects_zero_target() {
        let levels = vec![Level::new(0.0, 2, 0).unwrap()];
        let p = PairingProblem::new(levels, 1).unwrap();
        assert!(sweep(&p, &OccupationMap::new(vec![1]), 0.0, &SweepOptions::default()).is_err());
    }

    #[test]
    fn samples_are_monotone_and_converged() {
        let p = crate::model::build_lattice_model(6, 18).unwrap();
        let occ = crate::model::ground_occupation(&p);
        let opts = SweepOptions { discover: false, ..Default::default() };
        let path = sweep(&p, &occ, -0.03, &opts).unwrap();
        assert!(path.is_complete(), "{:?}", path.status);
        for w in path.samples.windows(2) {
            assert!(w[1].g < w[0].g);
        }
        assert!(path.samples.iter().all(|s| s.residual_norm <= 1e-10));
        let table = sample_figure_data(&path);
        assert_eq!(table.header.len(), 19);
        assert_eq!(table.header[1], "re_e_l1_1");
    }

    #[test]
    fn repeated_sweeps_are_bit_identical() {
        let p = crate::model::build_lattice_model(6, 18).unwrap();
        let occ = crate::model::ground_occupation(&p);
        let a = sweep(&p, &occ, 0.3, &SweepOptions::default()).unwrap();
        let b = sweep(&p, &occ, 0.3, &SweepOptions::default()).unwrap();
        assert!(!a.crossings.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn collapse_energies_are_exact_eigenvalues() {
        let p = crate::model::build_lattice_model(2, 2).unwrap();
        let occ = crate::model::ground_occupation(&p);
        let path = sweep(&p, &occ, -1.5, &SweepOptions::default()).unwrap();
        assert!(path.is_complete());
        assert_eq!(path.crossings.len(), 1);
        let point = &path.crossings[0];
        let spectrum = crate::oracle::exact_spectrum(&p, point.g_c).unwrap();
        assert!(crate::oracle::nearest_eigenvalue(&spectrum, point.energy) <= 1e-9);
        // the path passes through the collapsed configuration
        let at = path.samples.iter().find(|s| s.g == point.g_c).expect("sample at g_c");
        assert_eq!(at.energy, point.energy);
        for s in &path.samples {
            let spectrum = crate::oracle::exact_spectrum(&p, s.g).unwrap();
            assert!(crate::oracle::nearest_eigenvalue(&spectrum, s.energy) <= 1e-8, "g = {}", s.g);
        }
    }
}
