use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient variation: {0}")]
    InsufficientVariation(String),

    #[error("rank deficient system: rank {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("infeasible response odds: component {index} = {value:.3e}")]
    InfeasibleOdds { index: usize, value: f64 },

    #[error("intercept calibration failed: target {target} outside achievable range [{low:.6}, {high:.6}]")]
    Calibration { target: f64, low: f64, high: f64 },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("separation detected while fitting {0}")]
    Separation(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("likelihood decreased at iteration {iteration}: {previous} -> {current}")]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad configuration rather than by the data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_))
    }
}
