use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where a Richardson-type expression hit a pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pole {
    /// Pair energy `pair` sits exactly on `2 * eta[level]`.
    Level { pair: usize, level: usize },
    /// Pair energies `a` and `b` coincide.
    Coincident { a: usize, b: usize },
}

impl fmt::Display for Pole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pole::Level { pair, level } => {
                write!(f, "pair energy {pair} equals twice the energy of level {level}")
            }
            Pole::Coincident { a, b } => write!(f, "pair energies {a} and {b} coincide"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{pairs} pairs exceed the capacity of {capacity} pair states")]
    Capacity { pairs: usize, capacity: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("singular evaluation: {0}")]
    Singular(Pole),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("weak-coupling initialisation of level {level} did not converge; use a smaller coupling")]
    Initialization { level: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("null space of the cluster matrix is not one-dimensional (singular value ratio {ratio:.3e})")]
    DegenerateNullSpace { ratio: f64 },

    #[error("derivative system at g_c = {g_c} is singular")]
    DegenerateTangent { g_c: f64 },

    #[error("critical root in [{lo}, {hi}] unresolved: {reason}")]
    UnresolvedRoot { lo: f64, hi: f64, reason: String },

    #[error("pair basis dimension {dimension} exceeds the guard of {limit}")]
    DimensionGuard { dimension: usize, limit: usize },

    #[error("malformed record: {0}")]
    Record(String),
}
