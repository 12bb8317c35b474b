use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error(
        "matrix is not symplectic-orthogonal: orthogonality defect {orth_defect:.3e}, \
         symplectic defect {symp_defect:.3e} (tol {tol:.1e})"
    )]
    NotSymplecticOrthogonal {
        orth_defect: f64,
        symp_defect: f64,
        tol: f64,
    },

    #[error("matrix does not commute with J: defect {defect:.3e} (tol {tol:.1e})")]
    Inconsistent { defect: f64, tol: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{samples} samples alias a grid with K_max = {k_max}; need at least {required}")]
    Aliasing {
        samples: usize,
        k_max: usize,
        required: usize,
    },

    #[error("frequency grid mismatch")]
    GridMismatch,

    #[error("no crossing of the level set found along the ray up to radius {rho_max:.3e}")]
    UnboundedSurface { rho_max: f64 },

    #[error("convexity violation: {0}")]
    ConvexityViolation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid gauge: {0}")]
    InvalidGauge(String),

    #[error("surface is not pinched: R/r = {ratio:.6} >= sqrt(2)")]
    NotPinched { ratio: f64 },

    #[error("gradients are not proportional on the surface: relative residual {residual:.3e}")]
    NonProportionalGradient { residual: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
