use thiserror::Error;

/// Errors produced by the mesh, discretization and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("function belongs to mesh {found:?}, expected {expected:?}")]
    StaleFunction {
        expected: crate::mesh::MeshStamp,
        found: crate::mesh::MeshStamp,
    },

    #[error("degenerate element {element} (signed area {area:e})")]
    NumericalDegeneracy { element: usize, area: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotSpd { pivot: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (last relative change {last_change:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("adaptive level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_level(self, level: usize) -> Self {
        Error::AtLevel {
            level,
            source: Box::new(self),
        }
    }
}
