//! Exact solutions of the Richardson pairing equations, including the
//! critical couplings where clusters of pair energies collapse onto a level.

pub mod cluster;
pub mod continuation;
pub mod critical;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod records;
pub mod solver;
pub mod tangent;

pub use cluster::{ClusterSpec, PnCoefficients, PowerSums};
pub use continuation::{
    discover_critical, sample_figure_data, sweep, ClusterSizes, FigureTable, Sample, StepControl, SweepOptions,
    SweepPath, SweepStatus,
};
pub use critical::{
    scan_critical, solve_critical, verify_point, BranchSpec, CriticalOptions, CriticalPoint, ScanResult,
};
pub use error::{Error, Pole, Result};
pub use model::{
    build_lattice_model, excited_occupations, ground_occupation, load_problem, save_problem, Level, LoadedProblem,
    OccupationMap, PairingProblem,
};
pub use oracle::exact_spectrum;
pub use solver::{newton_solve, NewtonOptions, PairEnergies, RichardsonSystem, SolveReport};
pub use tangent::{linear_guess, solve_tangent, LinearGuess, TangentData};

pub use num_complex::Complex64;
