use thiserror::Error;

pub type Result<T> = std::result::Result<T, GsurfError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GsurfError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("refinement not supported: {0}")]
    UnsupportedRefinement(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("numeric range exceeded: {0}")]
    NumericRange(String),
    #[error("singular estimator: {0}")]
    Singularity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("conditioning infeasible: acceptance rate {rate:.3e} below {floor:.1e}")]
    InfeasibleConditioning { rate: f64, floor: f64 },
}
