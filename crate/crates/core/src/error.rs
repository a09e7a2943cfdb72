use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("macroelement tiling impossible: {count} cells along axis {axis} is not even")]
    OddCellCount { axis: usize, count: usize },

    #[error("size mismatch for {what}: expected {expected}, found {found}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("point ({x}, {y}, {z}) lies outside the mesh")]
    PointOutsideDomain { x: f64, y: f64, z: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("entry ({row}, {col}) is outside the fixed sparsity pattern")]
    PatternViolation { row: usize, col: usize },

    #[error("singular matrix: pivot {pivot:e} at row {row}")]
    SingularMatrix { row: usize, pivot: f64 },

    #[error("GMRES did not converge in {iterations} iterations (relative residual {relative_residual:e})")]
    KrylovNotConverged {
        iterations: usize,
        relative_residual: f64,
        history: Vec<f64>,
    },

    #[error("symmetric eigenvalue iteration did not converge for index {index}")]
    EigenNotConverged { index: usize },

    #[error("time step {step} at t = {time:e} s rejected after {retries} retries: {reason}")]
    StepRejected {
        step: usize,
        time: f64,
        retries: usize,
        reason: String,
    },
}
