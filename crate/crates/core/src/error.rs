use thiserror::Error;

/// Errors raised while loading data, fitting, or computing standard errors.
#[derive(Debug, Error)]
pub enum CureError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no censored observations: the cure fraction is not identifiable")]
    Unidentifiable,

    #[error("covariate `{0}` is constant and cannot be estimated")]
    ConstantCovariate(String),

    #[error(
        "risk set at time {time} has weighted size {denominator:e}, below the underflow floor"
    )]
    DegenerateRiskSet { time: f64, denominator: f64 },

    #[error("{solver} did not converge after {iterations} iterations (gradient sup-norm {gradient_norm:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("separation detected: coefficient {index} reached {value:e}")]
    Separation { index: usize, value: f64 },

    #[error("M-step failed at EM iteration {iteration}: {source}")]
    MStep {
        iteration: usize,
        #[source]
        source: Box<CureError>,
    },

    #[error("information matrix is not positive definite (eigenvalue {eigenvalue:e})")]
    RankDeficient { eigenvalue: f64 },

    #[error("bootstrap unstable: {failed} of {total} replicates failed")]
    BootstrapInstability { failed: usize, total: usize },

    #[error("simulation study unstable: {failed} of {total} replications failed ({detail})")]
    StudyInstability {
        failed: usize,
        total: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CureError> = std::result::Result<T, E>;
