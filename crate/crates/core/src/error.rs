use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The bridge connector dipped to a non-positive value.
    #[error("bridge connector not positive: min {min:e} at r = {at}")]
    BridgeNotPositive { min: f64, at: f64 },

    #[error("integral {name} diverges (tail exponent {exponent} >= -1)")]
    DivergentIntegral { name: &'static str, exponent: f64 },

    #[error("adaptive quadrature on [{a}, {b}] exceeded {panels} panels (error estimate {error:e})")]
    QuadratureFailure {
        a: f64,
        b: f64,
        panels: usize,
        error: f64,
    },

    #[error("coefficient table exceeds ceiling {ceiling:e}: sup|beta| = {sup_beta:e}, sup|gamma| = {sup_gamma:e}")]
    UnboundedCoefficient {
        sup_beta: f64,
        sup_gamma: f64,
        ceiling: f64,
    },

    #[error("ellipticity violated: measured coercivity {min:e} <= 0")]
    EllipticityViolated { min: f64 },

    #[error("finite-difference step {h:e} too large for |x| = {r:e}")]
    StepTooLarge { h: f64, r: f64 },

    #[error("grid too coarse: {measure} {residual:e} violates bound {tolerance:e}")]
    GridTooCoarse {
        measure: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("tridiagonal solve broke down at row {row}")]
    SolverSingular { row: usize },

    #[error("L^p norm diverges: p * mu = {p_mu} >= n = {n}")]
    DivergentNorm { p_mu: f64, n: usize },

    #[error("degenerate exponent fit: {0}")]
    DegenerateFit(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name used in CLI error JSON and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParams(_) => "InvalidParams",
            Error::BridgeNotPositive { .. } => "BridgeNotPositive",
            Error::DivergentIntegral { .. } => "DivergentIntegral",
            Error::QuadratureFailure { .. } => "QuadratureFailure",
            Error::UnboundedCoefficient { .. } => "UnboundedCoefficient",
            Error::EllipticityViolated { .. } => "EllipticityViolated",
            Error::StepTooLarge { .. } => "StepTooLarge",
            Error::GridTooCoarse { .. } => "GridTooCoarse",
            Error::SolverSingular { .. } => "SolverSingular",
            Error::DivergentNorm { .. } => "DivergentNorm",
            Error::DegenerateFit(_) => "DegenerateFit",
            Error::Usage(_) => "Usage",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
