use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("exact polytope conversion is only supported up to dimension 3, got {0}")]
    UnsupportedDimension(usize),

    #[error("invalid interval: lower bound exceeds upper bound in coordinate {0}")]
    InvalidInterval(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("data matrix has rank {rank}, {required} required")]
    RankDeficient { rank: usize, required: usize },

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("quadratic term is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),

    #[error("pair (A, B) is not stabilizable: {0}")]
    Unstabilizable(&'static str),

    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiDiverged(usize),

    #[error("Lyapunov vertex verification failed: worst max eigenvalue {worst:e}")]
    LyapunovFailed { worst: f64 },

    #[error("interval vertex enumeration needs 2^{0} vertices, above the 2^12 cap")]
    VertexCapExceeded(usize),

    #[error("closed-loop matrix is not Schur stable (spectral radius {0})")]
    Unstable(f64),

    #[error("no kappa <= {kappa_max} satisfies the contraction test at theta = {theta}")]
    RpiNotFound { kappa_max: usize, theta: f64 },

    #[error("setpoint violates a tightened constraint (slack {slack:e} on {which})")]
    SetpointInfeasible { which: &'static str, slack: f64 },

    #[error("tightened {0} constraint set is empty")]
    EmptySet(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
