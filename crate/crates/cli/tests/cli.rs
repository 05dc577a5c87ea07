use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const LATTICE_6X6_TABLE: &str = "\
level    energy  omega
    1  -4.00000      2
    2  -3.00000      8
    3  -2.00000      8
    4  -1.00000      8
    5         0     20
    6   1.00000      8
    7   2.00000      8
    8   3.00000      8
    9   4.00000      2
";

/// Ground-state critical couplings of the 6x6 model with 18 pairs: (level, g_c, tolerance).
/// Level 3's reference has the two digits after `0.0635` in the order the
/// determinant root and the zero of S_1 both give.
const GROUND_NEGATIVE: [(usize, f64, f64); 4] =
    [(4, -0.0413245, 1e-5), (3, -0.0635201, 1e-5), (2, -0.0877434, 1e-5), (1, -0.131927, 5e-5)];
const GROUND_POSITIVE: [(usize, f64); 3] = [(2, 0.170878), (3, 0.240579), (4, 0.598232)];

/// Level-4 collapses on deflated branches: (occupation, g_c, energy).
const DEFLATED_LEVEL4: [(&str, f64, f64); 6] = [
    ("(1,4,4,0,0,2,2,0,0)", -0.0384565, -47.6184),
    ("(1,4,4,0,0,3,1,0,0)", -0.0391412, -49.5405),
    ("(1,4,4,0,2,0,2,0,0)", -0.0394719, -53.3549),
    ("(1,4,4,0,2,1,1,0,0)", -0.0404240, -55.5262),
    ("(1,4,4,0,2,2,0,0,0)", -0.0412922, -57.4106),
    ("(1,4,4,0,4,0,0,0,0)", -0.0413245, -62.5795),
];

const FOUR_LEVELS: &str = "\
label = \"four\"
pairs = 4
[[levels]]
eta = 0.0
omega = 2
[[levels]]
eta = 1.0
omega = 2
[[levels]]
eta = 2.0
omega = 2
[[levels]]
eta = 3.0
omega = 2
";

fn richardson(dir: &Path, args: &[&str]) -> Output {
    richardson_env(dir, args, &[])
}

fn richardson_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_richardson"));
    cmd.current_dir(dir).args(args).env_remove("RICHARDSON_THREADS").env("RUST_LOG", "off");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn lattice_file(dir: &Path, n: usize, pairs: usize) -> PathBuf {
    let path = dir.join(format!("l{n}.toml"));
    let out = richardson(
        dir,
        &["lattice", "--n", &n.to_string(), "--pairs", &pairs.to_string(), "--out", path.to_str().unwrap()],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

/// `(level, g_c, m_k, energy)` rows of every critical table on stdout.
fn critical_rows(text: &str) -> Vec<(usize, f64, usize, f64)> {
    text.lines()
        .filter_map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return None;
            }
            Some((f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?, f[3].parse().ok()?))
        })
        .collect()
}

fn find_file(dir: &Path, suffix: &str) -> PathBuf {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().ends_with(suffix))
        .unwrap_or_else(|| panic!("no file ending in {suffix}"))
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    read_csv_text(&std::fs::read_to_string(path).unwrap())
}

fn read_csv_text(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    (header, lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect())
}

/// Levels of the n x n lattice by direct enumeration: energy -> pair-state degeneracy.
fn enumerate_levels(n: usize) -> Vec<(f64, u32)> {
    let mut groups: BTreeMap<i64, (f64, u32)> = BTreeMap::new();
    for a in 0..n {
        for b in 0..n {
            let e = -2.0 * ((2.0 * PI * a as f64 / n as f64).cos() + (2.0 * PI * b as f64 / n as f64).cos());
            let entry = groups.entry((e * 1e8).round() as i64).or_insert((e, 0));
            entry.1 += 2;
        }
    }
    groups.into_values().collect()
}

#[test]
fn lattice_prints_level_table() {
    let dir = TempDir::new().unwrap();
    let out = richardson(dir.path(), &["lattice", "--n", "6", "--pairs", "18"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), LATTICE_6X6_TABLE);
}

#[test]
fn lattice_odd_sizes_match_enumeration() {
    let dir = TempDir::new().unwrap();
    for n in [3, 5] {
        let out = richardson(dir.path(), &["lattice", "--n", &n.to_string(), "--pairs", "2"]);
        assert_eq!(code(&out), 0);
        let rows: Vec<(f64, u32)> = stdout(&out)
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split_whitespace().collect();
                (f[1].parse().unwrap(), f[2].parse().unwrap())
            })
            .collect();
        let expect = enumerate_levels(n);
        assert_eq!(rows.len(), expect.len());
        for ((e, o), (ee, eo)) in rows.iter().zip(&expect) {
            assert!((e - ee).abs() <= 1e-5 * ee.abs().max(1.0), "n={n}: {e} vs {ee}");
            assert_eq!(o, eo);
        }
        let fractional = expect.iter().any(|(e, _)| (e - e.round()).abs() > 1e-9);
        assert_eq!(stderr(&out).contains("not integers"), fractional, "n={n}");
    }
}

#[test]
fn lattice_over_capacity_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = richardson(dir.path(), &["lattice", "--n", "6", "--pairs", "100"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("capacity"));
}

#[test]
fn critical_ground_branch_negative_couplings() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let out = richardson(
        dir.path(),
        &[
            "critical",
            problem.to_str().unwrap(),
            "--level",
            "1",
            "--level",
            "2",
            "--level",
            "3",
            "--level",
            "4",
            "--g-min",
            "-0.15",
            "--g-max",
            "0",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = critical_rows(&stdout(&out));
    assert_eq!(rows.len(), 4, "{}", stdout(&out));
    for (level, g_ref, tol) in GROUND_NEGATIVE {
        let row = rows.iter().find(|r| r.0 == level).expect("level present");
        assert!((row.1 - g_ref).abs() <= tol, "level {level}: {} vs {g_ref}", row.1);
    }
    let cache = find_file(dir.path(), "_critical.csv");
    let text = std::fs::read_to_string(cache).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn critical_deflated_level4_branches() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let mut args =
        vec!["critical", problem.to_str().unwrap(), "--level", "4", "--g-min", "-0.05", "--g-max", "0", "--deflated"];
    for (occ, _, _) in &DEFLATED_LEVEL4 {
        args.push("--branch");
        args.push(occ);
    }
    let out = richardson(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let blocks: Vec<&str> = text.split("branch ").skip(1).collect();
    assert_eq!(blocks.len(), DEFLATED_LEVEL4.len());
    for (block, (occ, g_ref, e_ref)) in blocks.iter().zip(DEFLATED_LEVEL4) {
        assert!(block.starts_with(occ), "{block}");
        let rows = critical_rows(block);
        let best = rows
            .iter()
            .min_by(|a, b| (a.1 - g_ref).abs().total_cmp(&(b.1 - g_ref).abs()))
            .unwrap_or_else(|| panic!("{occ}: no rows"));
        assert!((best.1 - g_ref).abs() <= 1e-5, "{occ}: {} vs {g_ref}", best.1);
        assert!((best.3 - e_ref).abs() <= 1e-3, "{occ}: {} vs {e_ref}", best.3);
    }
}

#[test]
fn critical_empty_range_prints_empty_table() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let out = richardson(dir.path(), &["critical", problem.to_str().unwrap(), "--g-min", "0.001", "--g-max", "0.002"]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "branch (1,4,4,4,5,0,0,0,0)\nlevel  g_c  m_k  energy\n");
}

#[test]
fn critical_lost_branch_is_unresolved() {
    let dir = TempDir::new().unwrap();
    let problem = dir.path().join("four.toml");
    std::fs::write(&problem, FOUR_LEVELS).unwrap();
    let out = richardson(
        dir.path(),
        &[
            "critical",
            problem.to_str().unwrap(),
            "--level",
            "1",
            "--g-min",
            "-3",
            "--g-max",
            "3",
            "--deflated",
            "--branch",
            "(1,1,0,0)",
        ],
    );
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("unresolved"));
}

#[test]
fn critical_schema_error_names_the_field() {
    let dir = TempDir::new().unwrap();
    let problem = dir.path().join("bad.toml");
    std::fs::write(&problem, "pairs = 1\n[[levels]]\neta = 0.0\nomega = -2\n").unwrap();
    let out = richardson(dir.path(), &["critical", problem.to_str().unwrap(), "--g-min", "-1", "--g-max", "1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("levels[0].omega"), "{}", stderr(&out));
}

#[test]
fn sweep_path_marks_positive_crossings() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let out = richardson(dir.path(), &["sweep", problem.to_str().unwrap(), "--g-target", "0.65"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = read_csv(&find_file(dir.path(), "_pos.csv"));
    assert_eq!(&header[..2], &["g", "E"]);
    let eta = [-4.0, -3.0, -2.0, -1.0];
    for (level, g_ref) in GROUND_POSITIVE {
        let row = rows
            .iter()
            .find(|r| (r[0] - g_ref).abs() <= 1e-5)
            .unwrap_or_else(|| panic!("no sample within 1e-5 of {g_ref}"));
        // five pair energies sit exactly on twice the level energy
        let on_level =
            (2..row.len()).step_by(2).filter(|&i| row[i] == 2.0 * eta[level - 1] && row[i + 1] == 0.0).count();
        assert_eq!(on_level, 5, "level {level}");
    }
    assert!((rows.last().unwrap()[0] - 0.65).abs() < 1e-12);
    let (fig_header, fig_rows) = read_csv(&find_file(dir.path(), "_pos_figure.csv"));
    assert_eq!(fig_header[0], "g");
    assert_eq!(fig_rows.len(), rows.len());
    // the sweep caches the crossings it met
    let cache = std::fs::read_to_string(find_file(dir.path(), "_critical.csv")).unwrap();
    assert_eq!(cache.lines().count(), 1 + GROUND_POSITIVE.len());
}

#[test]
fn sweep_reuses_cached_records() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let p = problem.to_str().unwrap();
    let out = richardson(dir.path(), &["critical", p, "--g-min", "0", "--g-max", "0.3"]);
    assert_eq!(code(&out), 0);
    let first = richardson(dir.path(), &["sweep", p, "--g-target", "0.3"]);
    let path_a = std::fs::read_to_string(find_file(dir.path(), "_pos.csv")).unwrap();
    let second = richardson(dir.path(), &["sweep", p, "--g-target", "0.3", "--no-cache"]);
    let path_b = std::fs::read_to_string(find_file(dir.path(), "_pos.csv")).unwrap();
    assert_eq!(code(&first), 0);
    assert_eq!(code(&second), 0);
    // discovery re-steps after each detection, so only crossings and the endpoint must agree
    assert_eq!(critical_rows(&stdout(&first)), critical_rows(&stdout(&second)));
    assert_eq!(critical_rows(&stdout(&first)).len(), 2);
    let (_, a) = read_csv_text(&path_a);
    let (_, b) = read_csv_text(&path_b);
    assert!((a.last().unwrap()[1] - b.last().unwrap()[1]).abs() <= 1e-9);
}

#[test]
fn sweep_power_sums_near_collapse() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let cfg = dir.path().join("fine.toml");
    std::fs::write(&cfg, "critical_window = 5e-4\n").unwrap();
    let out = richardson(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "sweep",
            problem.to_str().unwrap(),
            "--g-target",
            "0.18",
            "--sp-level",
            "2",
            "--sp-window",
            "0.1689,0.1729",
            "--max-step",
            "2e-4",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = read_csv(&find_file(dir.path(), "_sp_l2.csv"));
    assert_eq!(header, ["g", "S1", "S2", "S3", "S4", "S5", "S6"]);
    let at = rows.iter().position(|r| (r[0] - 0.170878).abs() <= 1e-5).expect("collapsed sample");
    assert!(rows[at][1..].iter().all(|&s| s == 0.0));
    let (below, above) = (&rows[..at], &rows[at + 1..]);
    assert!(below.len() >= 5 && above.len() >= 5);
    // S_1..S_5 change sign through g_c, linearly; S_6 touches zero quadratically
    for p in 1..=5 {
        assert!(below.iter().all(|r| r[p] > 0.0) && above.iter().all(|r| r[p] < 0.0), "S{p}");
        let slope = |r: &Vec<f64>| r[p] / (r[0] - 0.1708776);
        let (s0, s1) = (slope(&below[0]), slope(below.last().unwrap()));
        assert!((s0 / s1 - 1.0).abs() < 0.2, "S{p} not linear: {s0} vs {s1}");
    }
    assert!(rows.iter().all(|r| r[6] >= 0.0));
    let curvature = |r: &Vec<f64>| r[6] / (r[0] - 0.1708776).powi(2);
    let (c0, c1) = (curvature(&below[0]), curvature(above.last().unwrap()));
    assert!((c0 / c1 - 1.0).abs() < 0.3, "S6 not quadratic: {c0} vs {c1}");
}

#[test]
fn sweep_zero_target_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 2, 2);
    let out = richardson(dir.path(), &["sweep", problem.to_str().unwrap(), "--g-target", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_truncation_keeps_partial_output() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let cfg = dir.path().join("stiff.toml");
    std::fs::write(&cfg, "newton_max_iter = 1\nmin_step = 0.01\ninitial_step = 0.01\n").unwrap();
    let out = richardson(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "sweep", problem.to_str().unwrap(), "--g-target", "0.65"],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("truncated"));
    let (_, rows) = read_csv(&find_file(dir.path(), "_pos.csv"));
    assert!(!rows.is_empty() && rows.last().unwrap()[0] < 0.65);
}

#[test]
fn verify_small_lattice_on_grid() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 2, 2);
    let out = richardson(dir.path(), &["verify", problem.to_str().unwrap(), "--grid=-0.2,0.2,11"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.trim_end().ends_with("ok")).count(), 11);
    let last = text.lines().last().unwrap();
    let dev: f64 = last.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(dev <= 1e-8, "{last}");
}

#[test]
fn verify_at_zero_coupling_is_exact() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 2, 2);
    let out = richardson(dir.path(), &["verify", problem.to_str().unwrap(), "--g", "0"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("max deviation 0.000e0"));
}

#[test]
fn verify_flags_missing_branches() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 2, 2);
    let cfg = dir.path().join("stiff.toml");
    std::fs::write(&cfg, "newton_max_iter = 1\nmin_step = 0.05\ninitial_step = 0.05\nmax_step = 0.05\n").unwrap();
    let out =
        richardson(dir.path(), &["--config", cfg.to_str().unwrap(), "verify", problem.to_str().unwrap(), "--g=-0.9"]);
    assert_eq!(code(&out), 1, "{}{}", stdout(&out), stderr(&out));
    assert!(stderr(&out).contains("missing branch"), "{}", stderr(&out));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn verify_refuses_large_bases() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let out = richardson(dir.path(), &["verify", problem.to_str().unwrap(), "--g", "0.1"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("guard"));
}

#[test]
fn output_is_independent_of_thread_count() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 6, 18);
    let args = ["critical", problem.to_str().unwrap(), "--g-min", "-0.15", "--g-max", "0.65"];
    let one = richardson_env(dir.path(), &args, &[("RICHARDSON_THREADS", "1")]);
    let many = richardson_env(dir.path(), &args, &[("RICHARDSON_THREADS", "4")]);
    assert_eq!(code(&one), 0);
    assert_eq!(stdout(&one), stdout(&many));
    let bad = richardson_env(dir.path(), &args, &[("RICHARDSON_THREADS", "0")]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn config_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let problem = lattice_file(dir.path(), 2, 2);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "no_such_option = 1\n").unwrap();
    let out =
        richardson(dir.path(), &["--config", cfg.to_str().unwrap(), "verify", problem.to_str().unwrap(), "--g", "0"]);
    assert_eq!(code(&out), 2);
}
