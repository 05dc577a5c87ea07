//! The four subcommands. Each returns the process exit status.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use richardson_core::continuation::cluster_power_sums;
use richardson_core::oracle::{nearest_eigenvalue, pair_basis};
use richardson_core::records::{
    branch_hash, path_file_name, read_critical_records, write_critical_records, write_path_csv, write_table_csv,
};
use richardson_core::{
    build_lattice_model, exact_spectrum, excited_occupations, ground_occupation, load_problem, sample_figure_data,
    save_problem, scan_critical, sweep as run_sweep, BranchSpec, ClusterSizes, CriticalPoint, Error, OccupationMap,
    PairingProblem, RichardsonSystem, SweepStatus,
};

use crate::config::Config;
use crate::output::{render_table, sig6, write_atomic};
use crate::{CriticalArgs, LatticeArgs, SweepArgs, UsageError, VerifyArgs, EXIT_TRUNCATED, EXIT_UNRESOLVED};

const DEFAULT_VERIFY_TOL: f64 = 1e-8;
/// Two records closer than this in `g_c` at the same level are the same point.
const SAME_POINT_TOL: f64 = 1e-9;

pub fn lattice(args: &LatticeArgs) -> anyhow::Result<u8> {
    let problem = build_lattice_model(args.n, args.pairs)?;
    let rows: Vec<Vec<String>> = problem
        .levels()
        .iter()
        .enumerate()
        .map(|(j, l)| vec![(j + 1).to_string(), sig6(l.eta), l.omega.to_string()])
        .collect();
    print!("{}", render_table(&["level", "energy", "omega"], &rows));
    if problem.levels().iter().any(|l| l.eta.fract() != 0.0) {
        eprintln!("note: level energies of the {0}x{0} lattice are not integers", args.n);
    }
    if let Some(out) = &args.out {
        write_atomic(out, &save_problem(&problem))?;
        eprintln!("wrote {}", out.display());
    }
    Ok(0)
}

fn load(path: &Path) -> anyhow::Result<(PairingProblem, String)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let loaded = load_problem(&text).with_context(|| format!("loading {}", path.display()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let label = match loaded.problem.label() {
        Some(l) => l.to_string(),
        None => path.file_stem().map_or_else(|| "problem".into(), |s| s.to_string_lossy().into_owned()),
    };
    Ok((loaded.problem, label))
}

fn parse_branch(problem: &PairingProblem, raw: &str) -> anyhow::Result<OccupationMap> {
    if raw.trim() == "ground" {
        return Ok(ground_occupation(problem));
    }
    Ok(raw.parse::<OccupationMap>()?)
}

fn cache_path(dir: &Path, label: &str, branch: &OccupationMap) -> PathBuf {
    dir.join(format!("{label}_{}_critical.csv", branch_hash(branch)))
}

fn critical_rows(points: &[CriticalPoint]) -> Vec<Vec<String>> {
    points.iter().map(|p| vec![(p.k + 1).to_string(), sig6(p.g_c), p.m_k.to_string(), sig6(p.energy)]).collect()
}

fn check_range(lo: f64, hi: f64) -> anyhow::Result<()> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(UsageError(format!("coupling range [{lo}, {hi}] must be finite and non-empty")).into());
    }
    Ok(())
}

pub fn critical(args: &CriticalArgs, cfg: &Config) -> anyhow::Result<u8> {
    check_range(args.g_min, args.g_max)?;
    let (problem, label) = load(&args.input.problem)?;
    let dir = cfg.out_dir(args.input.dir.as_deref());
    let n_levels = problem.num_levels();
    if args.deflated && args.levels.is_empty() {
        return Err(UsageError("--deflated needs an explicit --level".into()).into());
    }
    let levels: Vec<usize> = if args.levels.is_empty() { (1..=n_levels).collect() } else { args.levels.clone() };
    if let Some(bad) = levels.iter().find(|&&k| k == 0 || k > n_levels) {
        return Err(UsageError(format!("level {bad} outside 1..={n_levels}")).into());
    }
    if args.out.is_some() && args.branches.len() > 1 {
        return Err(UsageError("--out takes a single --branch".into()).into());
    }
    let mut specs = Vec::new();
    for raw in &args.branches {
        if args.deflated && raw.trim() == "ground" {
            return Err(UsageError("a deflated branch needs an explicit occupation".into()).into());
        }
        let occ = parse_branch(&problem, raw)?;
        specs.push(if args.deflated { BranchSpec::Deflated(occ) } else { BranchSpec::Full(occ) });
    }
    let opts = cfg.critical_options();
    let mut unresolved = false;
    for spec in &specs {
        let (occ, kind) = match spec {
            BranchSpec::Full(o) => (o, "critical"),
            BranchSpec::Deflated(o) => (o, "deflated"),
        };
        let results: Vec<_> = levels
            .par_iter()
            .map(|&k| (k, scan_critical(&problem, k - 1, args.m_k, (args.g_min, args.g_max), spec, &opts)))
            .collect();
        let mut points = Vec::new();
        for (k, res) in results {
            match res {
                Ok(scan) => {
                    if let Some(reason) = scan.truncated {
                        unresolved = true;
                        eprintln!("unresolved: branch {occ} level {k}: {reason}");
                    }
                    if scan.complex_discarded > 0 {
                        eprintln!("note: branch {occ} level {k}: {} complex roots discarded", scan.complex_discarded);
                    }
                    points.extend(scan.points);
                }
                Err(err @ Error::UnresolvedRoot { .. }) => {
                    unresolved = true;
                    eprintln!("unresolved: branch {occ} level {k}: {err}");
                }
                Err(err) => return Err(err).with_context(|| format!("branch {occ}, level {k}")),
            }
        }
        points.sort_by(|a, b| a.k.cmp(&b.k).then(a.g_c.total_cmp(&b.g_c)));
        println!("branch {occ}");
        print!("{}", render_table(&["level", "g_c", "m_k", "energy"], &critical_rows(&points)));
        // the default record file accumulates across runs
        let records = match &args.out {
            Some(p) => (p.clone(), points),
            None => {
                let p = dir.join(format!("{label}_{}_{kind}.csv", branch_hash(occ)));
                let merged = merge_points(read_records(&p)?, &points);
                (p, merged)
            }
        };
        write_atomic(&records.0, &write_critical_records(&records.1)?)?;
        let path = records.0;
        eprintln!("wrote {}", path.display());
    }
    Ok(if unresolved { EXIT_UNRESOLVED } else { 0 })
}

/// Records in `path`, empty when the file does not exist.
fn read_records(path: &Path) -> anyhow::Result<Vec<CriticalPoint>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_critical_records(&text).with_context(|| format!("parsing {}", path.display()))
}

fn merge_points(mut cached: Vec<CriticalPoint>, found: &[CriticalPoint]) -> Vec<CriticalPoint> {
    for p in found {
        if !cached.iter().any(|q| q.k == p.k && (q.g_c - p.g_c).abs() <= SAME_POINT_TOL) {
            cached.push(p.clone());
        }
    }
    cached.sort_by(|a, b| a.g_c.total_cmp(&b.g_c));
    cached
}

pub fn sweep(args: &SweepArgs, cfg: &Config) -> anyhow::Result<u8> {
    if args.g_target == 0.0 || !args.g_target.is_finite() {
        return Err(UsageError("--g-target must be finite and non-zero".into()).into());
    }
    if args.sp_window.as_ref().is_some_and(|w| w.len() != 2) {
        return Err(UsageError("--sp-window takes lo,hi".into()).into());
    }
    let (problem, label) = load(&args.input.problem)?;
    let dir = cfg.out_dir(args.input.dir.as_deref());
    let occ = parse_branch(&problem, &args.branch)?;
    let sys = RichardsonSystem::from_problem(&problem);
    if let Some(k) = args.sp_level {
        if k == 0 || k > problem.num_levels() {
            return Err(UsageError(format!("--sp-level {k} outside 1..={}", problem.num_levels())).into());
        }
    }

    let cache = cache_path(&dir, &label, &occ);
    let mut opts = cfg.sweep_options();
    if let Some(h) = args.max_step {
        if !(h > 0.0 && h.is_finite()) {
            return Err(UsageError(format!("--max-step must be positive, got {h}")).into());
        }
        opts.step.max_step = h;
        opts.step.initial_step = opts.step.initial_step.min(h);
        opts.step.min_step = opts.step.min_step.min(h);
    }
    let cached = if args.no_cache { Vec::new() } else { read_records(&cache)? };
    log::info!("{} cached critical records", cached.len());
    opts.known = cached.clone();
    let path = run_sweep(&problem, &occ, args.g_target, &opts)?;

    println!("branch {occ}");
    print!("{}", render_table(&["level", "g_c", "m_k", "energy"], &critical_rows(&path.crossings)));
    if let Some(last) = path.samples.last() {
        println!("final g {}  energy {}  samples {}", sig6(last.g), sig6(last.energy), path.samples.len());
    }

    let stem = path_file_name(&label, &occ, args.g_target);
    let stem = stem.trim_end_matches(".csv");
    let mut written = vec![(dir.join(format!("{stem}.csv")), write_path_csv(&path)?)];
    let fig = sample_figure_data(&path);
    written.push((dir.join(format!("{stem}_figure.csv")), write_table_csv(&fig.header, &fig.rows)?));
    if let Some(level) = args.sp_level {
        let k = level - 1;
        let window = args.sp_window.as_deref().map(|w| (w[0].min(w[1]), w[0].max(w[1])));
        let center = window.map(|(lo, hi)| 0.5 * (lo + hi));
        let m_k = path
            .crossings
            .iter()
            .filter(|p| p.k == k)
            .min_by(|a, b| {
                let d = |p: &CriticalPoint| center.map_or(0.0, |c| (p.g_c - c).abs());
                d(a).total_cmp(&d(b))
            })
            .map_or_else(|| ClusterSizes::default_for(&sys).get(k), |p| p.m_k);
        let p_max = args.sp_max.unwrap_or(m_k + 1);
        let selected: Vec<_> =
            path.samples.iter().filter(|s| window.is_none_or(|(lo, hi)| s.g >= lo && s.g <= hi)).cloned().collect();
        let mut rows = Vec::with_capacity(selected.len());
        let mut skipped = 0;
        for s in &selected {
            match cluster_power_sums(&s.state.values, &sys, k, m_k, p_max) {
                Ok(sp) => rows.push(std::iter::once(s.g).chain(sp).collect()),
                Err(_) => skipped += 1,
            }
        }
        if skipped > 0 {
            eprintln!("note: {skipped} samples without a real cluster at level {level} left out of the S_p table");
        }
        let header: Vec<String> =
            std::iter::once("g".to_string()).chain((1..=p_max).map(|p| format!("S{p}"))).collect();
        written.push((dir.join(format!("{stem}_sp_l{level}.csv")), write_table_csv(&header, &rows)?));
    }
    for (file, text) in &written {
        write_atomic(file, text)?;
        eprintln!("wrote {}", file.display());
    }
    if !path.crossings.is_empty() || !cache.exists() {
        let base = if args.no_cache { read_records(&cache)? } else { cached };
        write_atomic(&cache, &write_critical_records(&merge_points(base, &path.crossings))?)?;
    }

    match path.status {
        SweepStatus::Completed => Ok(0),
        SweepStatus::Truncated(reason) => {
            eprintln!("truncated: {reason}");
            Ok(EXIT_TRUNCATED)
        }
    }
}

fn coupling_list(args: &VerifyArgs) -> anyhow::Result<Vec<f64>> {
    let gs = match &args.grid {
        Some(grid) if grid.len() != 3 => {
            return Err(UsageError("--grid takes lo,hi,count".into()).into());
        }
        Some(grid) => {
            let (lo, hi, count) = (grid[0], grid[1], grid[2]);
            if count < 1.0 || count.fract() != 0.0 {
                return Err(UsageError(format!("grid count must be a positive integer, got {count}")).into());
            }
            let n = count as usize;
            if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        }
        None => args.g.clone(),
    };
    if gs.is_empty() {
        return Err(UsageError("give couplings with --g or --grid".into()).into());
    }
    if let Some(bad) = gs.iter().find(|g| !g.is_finite()) {
        return Err(UsageError(format!("coupling {bad} is not finite")).into());
    }
    Ok(gs)
}

pub fn verify(args: &VerifyArgs, cfg: &Config) -> anyhow::Result<u8> {
    let gs = coupling_list(args)?;
    let (problem, _) = load(&args.input.problem)?;
    pair_basis(&problem)?;
    let tol = args.tol.or(cfg.verify_tol).unwrap_or(DEFAULT_VERIFY_TOL);
    let states = excited_occupations(&problem, problem.m_pairs());
    let opts = cfg.sweep_options();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    let mut ok = true;
    for &g in &gs {
        let spectrum = exact_spectrum(&problem, g)?;
        let energies: Vec<(OccupationMap, Option<f64>)> = states
            .par_iter()
            .map(|occ| {
                let e = if g == 0.0 {
                    Some(occ.unperturbed_energy(&problem))
                } else {
                    match run_sweep(&problem, occ, g, &opts) {
                        Ok(path) if path.is_complete() => path.samples.last().map(|s| s.energy),
                        Ok(path) => {
                            log::warn!("branch {occ} at g = {g}: {:?}", path.status);
                            None
                        }
                        Err(err) => {
                            log::warn!("branch {occ} at g = {g}: {err}");
                            None
                        }
                    }
                };
                (occ.clone(), e)
            })
            .collect();
        let missing: Vec<&OccupationMap> = energies.iter().filter(|(_, e)| e.is_none()).map(|(o, _)| o).collect();
        let mut found: Vec<f64> = energies.iter().filter_map(|(_, e)| *e).collect();
        found.sort_by(f64::total_cmp);
        let dev = if found.len() == spectrum.len() {
            found.iter().zip(&spectrum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            found.iter().map(|&e| nearest_eigenvalue(&spectrum, e)).fold(0.0, f64::max)
        };
        let row_ok = missing.is_empty() && found.len() == spectrum.len() && dev <= tol;
        for occ in &missing {
            eprintln!("missing branch {occ} at g = {}", sig6(g));
        }
        if found.len() + missing.len() != spectrum.len() {
            eprintln!(
                "state count {} differs from basis dimension {} at g = {}",
                states.len(),
                spectrum.len(),
                sig6(g)
            );
        }
        worst = worst.max(dev);
        ok &= row_ok;
        rows.push(vec![
            sig6(g),
            found.len().to_string(),
            spectrum.len().to_string(),
            format!("{dev:.3e}"),
            if row_ok { "ok" } else { "FAIL" }.to_string(),
        ]);
    }
    print!("{}", render_table(&["g", "states", "eigenvalues", "max_dev", "status"], &rows));
    println!("max deviation {worst:.3e} (tolerance {tol:.1e})");
    Ok(if ok { 0 } else { 1 })
}
