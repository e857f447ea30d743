use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model is not stationary: companion spectral radius {spectral_radius} >= 1")]
    NonStationary { spectral_radius: f64 },

    #[error("horizon T={horizon} is shorter than the model order {order}")]
    HorizonTooShort { horizon: usize, order: usize },

    #[error("window t={t} too large for horizon T={horizon}: requires T - 2t + 1 > 0")]
    WindowTooLarge { t: usize, horizon: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectral density is degenerate at frequency {nu}")]
    DegenerateDensity { nu: f64 },

    #[error("autocovariance quadrature did not converge after {nodes} nodes (last change {last_change:e})")]
    QuadratureDiverged { nodes: usize, last_change: f64 },

    #[error("covariance matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("constraint level eta={eta:e} is below the least-squares residual floor {floor:e}")]
    Infeasible { eta: f64, floor: f64 },

    #[error("scale guard: {0}")]
    ScaleGuard(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by bad inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::NonStationary { .. }
                | Error::HorizonTooShort { .. }
                | Error::WindowTooLarge { .. }
                | Error::ShapeMismatch(_)
                | Error::InvalidArgument(_)
                | Error::Infeasible { .. }
        )
    }
}
