use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("scenario infeasible after {retries} retries (seed {seed})")]
    ScenarioInfeasible { seed: u64, retries: usize },
    #[error("singular geometry: element distance {0:e} m")]
    SingularGeometry(f64),
    #[error("singular FIM: {0}")]
    SingularFim(String),
    #[error("infeasible by construction: {0}")]
    InfeasibleByConstruction(String),
    #[error("B2S infeasible at stage {stage} (iteration {iter})")]
    B2sInfeasible { stage: String, iter: usize },
    #[error("rank-one recovery found no feasible candidate")]
    RecoveryFailed,
    #[error("build error: {0}")]
    Build(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
