use gsurf_core::GsurfError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] GsurfError),
    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sweep table: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration and usage errors, 1 for anything that went wrong
    /// while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Toml(_)
            | CliError::Core(
                GsurfError::Config(_)
                | GsurfError::Parameter(_)
                | GsurfError::Grid(_)
                | GsurfError::Unsupported(_)
                | GsurfError::UnsupportedRefinement(_)
                | GsurfError::Domain(_)
                | GsurfError::Precondition(_),
            ) => 2,
            _ => 1,
        }
    }
}
