use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("design matrix is rank deficient; collinear column(s): {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("all fitting weights are zero")]
    ZeroWeights,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(
        "complete or quasi-complete separation in logistic fit after {iterations} iterations \
         (max |coef| = {max_abs_coef:.3e})"
    )]
    Separation {
        iterations: usize,
        max_abs_coef: f64,
        coef: Vec<f64>,
    },

    #[error("{model} fit did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NonConvergence {
        model: &'static str,
        iterations: usize,
        score_norm: f64,
        coef: Vec<f64>,
    },

    #[error(
        "beta response at row {row} is {value}, outside the open interval (0, 1); \
         clamp responses to [eps, 1 - eps] before fitting"
    )]
    BoundaryResponse { row: usize, value: f64 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("positivity violation: {clamped} of {total} {what} probabilities clamped (limit {limit:.3})")]
    Positivity {
        what: &'static str,
        clamped: usize,
        total: usize,
        limit: f64,
    },

    #[error("Jacobian is numerically singular (condition number {condition:.3e}); nearly dependent parameter: {parameter}")]
    SingularJacobian { condition: f64, parameter: String },

    #[error("estimating system is inconsistent: {0}")]
    System(String),

    #[error("stratum `{stratum}` has a single PSU; choose a lonely-PSU policy to proceed")]
    LonelyPsu { stratum: String },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("method {method}: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_method(self, method: impl std::fmt::Display) -> Self {
        Error::Method {
            method: method.to_string(),
            source: Box::new(self),
        }
    }
}
