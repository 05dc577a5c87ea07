//! Pairing problems: level sets, pair numbers and weak-coupling occupations.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Levels whose energies differ by less than this are merged.
pub const ENERGY_GROUPING_TOL: f64 = 1e-9;

/// One single-particle level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub eta: f64,
    /// Total degeneracy (number of fermion states).
    pub omega: u32,
    /// Seniority (number of unpaired fermions).
    #[serde(default)]
    pub nu: u32,
}

impl Level {
    pub fn new(eta: f64, omega: u32, nu: u32) -> Result<Self> {
        if !eta.is_finite() {
            return Err(Error::InvalidProblem(format!("level energy {eta} is not finite")));
        }
        if omega == 0 {
            return Err(Error::InvalidProblem("level degeneracy must be positive".into()));
        }
        if nu > omega {
            return Err(Error::InvalidProblem(format!("seniority {nu} exceeds degeneracy {omega}")));
        }
        Ok(Level { eta, omega, nu })
    }

    /// Effective degeneracy `nu/2 - omega/4`.
    pub fn d(&self) -> f64 {
        f64::from(self.nu) / 2.0 - f64::from(self.omega) / 4.0
    }

    /// Number of pair states left after blocking the unpaired fermions.
    pub fn pair_capacity(&self) -> usize {
        ((self.omega - self.nu) / 2) as usize
    }
}

/// Immutable problem definition: levels, pair number and coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingProblem {
    levels: Vec<Level>,
    m_pairs: usize,
    g: f64,
    label: Option<String>,
}

impl PairingProblem {
    /// Builds a problem; levels are sorted by energy and duplicates merged.
    pub fn new(levels: Vec<Level>, m_pairs: usize) -> Result<Self> {
        let (levels, _) = merge_levels(levels);
        Self::from_merged(levels, m_pairs)
    }

    fn from_merged(levels: Vec<Level>, m_pairs: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidProblem("level list is empty".into()));
        }
        let capacity: usize = levels.iter().map(Level::pair_capacity).sum();
        if m_pairs > capacity {
            return Err(Error::Capacity { pairs: m_pairs, capacity });
        }
        Ok(PairingProblem { levels, m_pairs, g: 0.0, label: None })
    }

    pub fn with_coupling(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn m_pairs(&self) -> usize {
        self.m_pairs
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn capacity(&self) -> usize {
        self.levels.iter().map(Level::pair_capacity).sum()
    }

    /// Mean distance between consecutive level energies (1 for a single level).
    pub fn mean_spacing(&self) -> f64 {
        let n = self.levels.len();
        if n < 2 {
            return 1.0;
        }
        (self.levels[n - 1].eta - self.levels[0].eta) / (n - 1) as f64
    }
}

/// Sorts levels by energy and merges entries closer than [`ENERGY_GROUPING_TOL`].
///
/// Merged levels sum their degeneracies and seniorities; one warning is
/// produced per merge.
pub fn merge_levels(mut levels: Vec<Level>) -> (Vec<Level>, Vec<String>) {
    levels.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    let mut out: Vec<Level> = Vec::with_capacity(levels.len());
    let mut warnings = Vec::new();
    for level in levels {
        match out.last_mut() {
            Some(last) if (level.eta - last.eta).abs() < ENERGY_GROUPING_TOL => {
                warnings.push(format!(
                    "duplicate level at eta = {}; merged (omega {} + {})",
                    last.eta, last.omega, level.omega
                ));
                last.omega += level.omega;
                last.nu += level.nu;
            }
            _ => out.push(level),
        }
    }
    (out, warnings)
}

/// Number of pairs per level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OccupationMap {
    pub counts: Vec<usize>,
}

impl OccupationMap {
    pub fn new(counts: Vec<usize>) -> Self {
        OccupationMap { counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Checks level count and per-level capacities against `problem`.
    pub fn validate(&self, problem: &PairingProblem) -> Result<()> {
        if self.counts.len() != problem.num_levels() {
            return Err(Error::InvalidArgument(format!(
                "occupation has {} entries but the problem has {} levels",
                self.counts.len(),
                problem.num_levels()
            )));
        }
        for (j, (&n, level)) in self.counts.iter().zip(problem.levels()).enumerate() {
            if n > level.pair_capacity() {
                return Err(Error::InvalidArgument(format!(
                    "level {j} holds {n} pairs but has room for {}",
                    level.pair_capacity()
                )));
            }
        }
        Ok(())
    }

    /// Unperturbed energy `sum_j 2 eta_j n_j`.
    pub fn unperturbed_energy(&self, problem: &PairingProblem) -> f64 {
        self.counts.iter().zip(problem.levels()).map(|(&n, l)| 2.0 * l.eta * n as f64).sum()
    }
}

impl std::fmt::Display for OccupationMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.counts.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl std::str::FromStr for OccupationMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let counts = trimmed
            .split(',')
            .map(|t| {
                t.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("bad occupation entry `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OccupationMap { counts })
    }
}

/// Tight-binding energy `-2 (cos kx + cos ky)` on an `n x n` periodic lattice.
pub fn lattice_energy(n: usize, a: usize, b: usize) -> f64 {
    let kx = 2.0 * PI * a as f64 / n as f64;
    let ky = 2.0 * PI * b as f64 / n as f64;
    -2.0 * (kx.cos() + ky.cos())
}

/// Square-lattice pairing model with `pairs` pairs; each momentum carries
/// two spin states, so a level's degeneracy is twice its momentum count.
pub fn build_lattice_model(n: usize, pairs: usize) -> Result<PairingProblem> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("lattice size must be at least 2, got {n}")));
    }
    let mut levels = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            levels.push(Level { eta: lattice_energy(n, a, b), omega: 2, nu: 0 });
        }
    }
    let (mut levels, _) = merge_levels(levels);
    for level in &mut levels {
        // integer energies come out of cos() with rounding noise
        let rounded = level.eta.round();
        if (level.eta - rounded).abs() < ENERGY_GROUPING_TOL {
            level.eta = rounded + 0.0;
        }
    }
    Ok(PairingProblem::from_merged(levels, pairs)?.with_label(format!("lattice-{n}x{n}")))
}

/// A parsed problem file plus any merge warnings.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: PairingProblem,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct ProblemFile<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    pairs: usize,
    g: f64,
    levels: &'a [Level],
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { path: path.into(), message: message.into() }
}

fn number(value: &toml::Value, path: &str) -> Result<f64> {
    match value {
        toml::Value::Float(x) if x.is_finite() => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(schema(path, "expected a finite number")),
    }
}

fn count(value: &toml::Value, path: &str) -> Result<u64> {
    match value {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(schema(path, "expected a non-negative integer")),
    }
}

/// Parses a TOML problem file with keys `pairs`, `levels = [{eta, omega, nu}]`
/// and optional `label` and `g`.
pub fn load_problem(source: &str) -> Result<LoadedProblem> {
    let table: toml::Table = source.parse().map_err(|e: toml::de::Error| schema("", e.message()))?;
    let mut warnings = Vec::new();
    for key in table.keys() {
        if !matches!(key.as_str(), "label" | "pairs" | "g" | "levels") {
            warnings.push(format!("unknown key `{key}` ignored"));
        }
    }
    let raw_levels = table
        .get("levels")
        .ok_or_else(|| schema("levels", "missing required key"))?
        .as_array()
        .ok_or_else(|| schema("levels", "expected an array of tables"))?;
    let mut levels = Vec::with_capacity(raw_levels.len());
    for (i, entry) in raw_levels.iter().enumerate() {
        let path = format!("levels[{i}]");
        let entry = entry.as_table().ok_or_else(|| schema(&path, "expected a table"))?;
        let eta = number(
            entry.get("eta").ok_or_else(|| schema(format!("{path}.eta"), "missing required key"))?,
            &format!("{path}.eta"),
        )?;
        let omega_path = format!("{path}.omega");
        let omega = count(entry.get("omega").ok_or_else(|| schema(&omega_path, "missing required key"))?, &omega_path)?;
        let nu_path = format!("{path}.nu");
        let nu = entry.get("nu").map(|v| count(v, &nu_path)).transpose()?.unwrap_or(0);
        let omega = u32::try_from(omega).map_err(|_| schema(&omega_path, "value too large"))?;
        let nu = u32::try_from(nu).map_err(|_| schema(&nu_path, "value too large"))?;
        let level = Level::new(eta, omega, nu).map_err(|e| schema(&path, e.to_string()))?;
        levels.push(level);
    }
    let pairs = count(table.get("pairs").ok_or_else(|| schema("pairs", "missing required key"))?, "pairs")? as usize;
    let g = table.get("g").map(|v| number(v, "g")).transpose()?.unwrap_or(0.0);
    let (levels, merged) = merge_levels(levels);
    warnings.extend(merged);
    let mut problem = PairingProblem::from_merged(levels, pairs)?.with_coupling(g);
    if let Some(label) = table.get("label") {
        let label = label.as_str().ok_or_else(|| schema("label", "expected a string"))?;
        problem = problem.with_label(label);
    }
    Ok(LoadedProblem { problem, warnings })
}

/// Serializes `problem` in the format read by [`load_problem`].
pub fn save_problem(problem: &PairingProblem) -> String {
    let file =
        ProblemFile { label: problem.label(), pairs: problem.m_pairs(), g: problem.g(), levels: problem.levels() };
    toml::to_string(&file).expect("problem serialization cannot fail")
}

/// Fills levels bottom-up.
pub fn ground_occupation(problem: &PairingProblem) -> OccupationMap {
    let mut remaining = problem.m_pairs();
    let counts = problem
        .levels()
        .iter()
        .map(|level| {
            let n = remaining.min(level.pair_capacity());
            remaining -= n;
            n
        })
        .collect();
    OccupationMap { counts }
}

/// Occupations reachable from the ground occupation by moving at most
/// `n_excitations` single pairs, sorted lexicographically.
pub fn excited_occupations(problem: &PairingProblem, n_excitations: usize) -> Vec<OccupationMap> {
    let caps: Vec<usize> = problem.levels().iter().map(Level::pair_capacity).collect();
    let mut seen = BTreeSet::new();
    let ground = ground_occupation(problem).counts;
    let mut frontier = vec![ground.clone()];
    seen.insert(ground);
    for _ in 0..n_excitations {
        let mut next = Vec::new();
        for counts in &frontier {
            for from in 0..counts.len() {
                if counts[from] == 0 {
                    continue;
                }
                for to in 0..counts.len() {
                    if to == from || counts[to] >= caps[to] {
                        continue;
                    }
                    let mut moved = counts.clone();
                    moved[from] -= 1;
                    moved[to] += 1;
                    if seen.insert(moved.clone()) {
                        next.push(moved);
                    }
                }
            }
        }
        frontier = next;
    }
    seen.into_iter().map(OccupationMap::new).collect()
}
