use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inconsistent basis: expected {expected} amplitudes, got {got}")]
    InconsistentBasis { expected: usize, got: usize },
    #[error("bitstring {0} is not in the subspace")]
    NotInSubspace(String),
    #[error("inconsistent target: {0}")]
    InconsistentTarget(String),
    #[error("empty target set")]
    EmptyTarget,
    #[error("plan infeasible: {0}")]
    PlanInfeasible(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("integration failure: {0}")]
    IntegrationFailure(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("too few instances: need at least {needed}, got {got}")]
    TooFewInstances { needed: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
