use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use richardson_bench::lattice_6x6;
use richardson_core::solver::init_weak_coupling;
use richardson_core::{
    discover_critical, ground_occupation, newton_solve, scan_critical, solve_tangent, sweep, BranchSpec, ClusterSizes,
    CriticalOptions, OccupationMap, RichardsonSystem, SweepOptions,
};

fn newton(c: &mut Criterion) {
    let problem = lattice_6x6();
    let sys = RichardsonSystem::from_problem(&problem);
    let start = init_weak_coupling(&sys, &ground_occupation(&problem), -1e-4).unwrap();
    c.bench_function("newton_solve 6x6 weak coupling", |b| b.iter(|| newton_solve(black_box(&start), &sys).unwrap()));
}

fn critical(c: &mut Criterion) {
    let problem = lattice_6x6();
    let occ: OccupationMap = "(1,4,4,0,4,0,0,0,0)".parse().unwrap();
    let branch = BranchSpec::Deflated(occ);
    let opts = CriticalOptions::default();
    c.bench_function("scan_critical deflated level 4", |b| {
        b.iter(|| scan_critical(&problem, 3, None, (-0.05, 0.0), black_box(&branch), &opts).unwrap())
    });
}

fn tangent(c: &mut Criterion) {
    let problem = lattice_6x6();
    let sys = RichardsonSystem::from_problem(&problem);
    let sizes = ClusterSizes::default_for(&sys);
    let found =
        discover_critical(&problem, &ground_occupation(&problem), (0.0, 0.2), &sizes, &CriticalOptions::default())
            .unwrap();
    let point = found.points.first().expect("collapse below 0.2").clone();
    c.bench_function("solve_tangent level 2", |b| b.iter(|| solve_tangent(black_box(&point), &sys).unwrap()));
}

fn full_sweep(c: &mut Criterion) {
    let problem = lattice_6x6();
    let occ = ground_occupation(&problem);
    let opts = SweepOptions::default();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group
        .bench_function("ground branch to 0.65", |b| b.iter(|| sweep(&problem, &occ, black_box(0.65), &opts).unwrap()));
    group.finish();
}

criterion_group!(benches, newton, critical, tangent, full_sweep);
criterion_main!(benches);
