use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("axis singularity: quantity undefined at r = 0")]
    AxisSingularity,

    #[error("pole singularity at theta = {theta}: d/dtheta f = {derivative:.3e} does not vanish")]
    PoleSingularity { theta: f64, derivative: f64 },

    #[error("drift is singular at the origin (r, z) = (0, 0)")]
    OriginSingularity,

    #[error("dimension mismatch: n = {n} needs {expected} extra angles, got {got}")]
    DimensionMismatch { n: usize, expected: usize, got: usize },

    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("time step {dt:.3e} exceeds the monotonicity limit {limit:.3e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("instability at t = {t:.6}: max|v| = {max_abs:.12e} exceeds initial max {initial_max:.12e}")]
    Instability {
        t: f64,
        max_abs: f64,
        initial_max: f64,
    },

    #[error("censored fraction {fraction:.2e} exceeds the {limit:.1e} budget")]
    Censored { fraction: f64, limit: f64 },

    #[error("point is not on the unit sphere: |x| = {norm}")]
    OffSphere { norm: f64 },

    #[error("non-finite sample {value} at (r, z) = ({r}, {z})")]
    NonFinite { r: f64, z: f64, value: f64 },

    #[error("r0 = {0} has not been certified for the subsolution inequality")]
    UncertifiedRadius(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
