use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("hamiltonian is not hermitian (defect {defect:.3e})")]
    NonHermitian { defect: f64 },

    #[error(
        "step size too large: dt * max(|H|, rates) = {product:.3e} exceeds {limit} \
         (dt = {dt:.3e} ns, scale = {scale:.3e} rad/ns); set allow_large_step to override"
    )]
    StepSize { dt: f64, scale: f64, product: f64, limit: f64 },

    #[error("integration unstable: min eigenvalue {min_eigenvalue:.3e} at t = {time:.6} ns")]
    Positivity { time: f64, min_eigenvalue: f64 },

    #[error("drive polarization is not circular enough: overlap with sigma+ = {plus:.4}, sigma- = {minus:.4}")]
    ImpurePolarization { plus: f64, minus: f64 },

    #[error("singular normal equations (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("runtime guard: {work} shot evaluations exceed limit {limit}; set allow_large_runs to override")]
    RuntimeGuard { work: usize, limit: usize },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("data row {row}: {message}")]
    Data { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
