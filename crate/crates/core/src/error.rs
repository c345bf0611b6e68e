//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// System construction rejected: masses, index ranges, or factor shapes
    /// are inconsistent.
    #[error("invalid system: {0}")]
    InvalidSpec(String),

    /// A tensor entry multiplies an undifferentiated wave component. The
    /// interaction must not depend on wave values, only on their first
    /// derivatives.
    #[error("row {row}: undifferentiated wave component {comp} in an interaction factor")]
    UndifferentiatedWave { row: usize, comp: usize },

    /// A direction vector was not on the unit circle within 1e-12.
    #[error("direction ({omega1}, {omega2}) is off the unit circle by {defect:e}")]
    OffCircle {
        omega1: f64,
        omega2: f64,
        defect: f64,
    },

    /// Bad argument to a numerical routine (wrong length, nonfinite input,
    /// empty window, nonpositive sample where a log is required, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Grid or time-stepping configuration violates a stability or domain
    /// constraint.
    #[error("invalid grid configuration: {0}")]
    InvalidGrid(String),

    /// Requested operation needs data the given state or recording does not
    /// contain.
    #[error("missing data: {0}")]
    MissingData(String),
}
