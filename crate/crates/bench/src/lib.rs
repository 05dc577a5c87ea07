//! Fixtures shared by the benchmarks.

use richardson_core::model::{build_lattice_model, PairingProblem};

/// The 6x6 half-filled lattice.
pub fn lattice_6x6() -> PairingProblem {
    build_lattice_model(6, 18).expect("6x6 lattice at half filling is valid")
}
