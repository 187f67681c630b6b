use thiserror::Error;

/// Errors raised by the solvers, the drivers and the configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("diffeomorphism failure at node ({i}, {j}): delta = {delta:.6e}")]
    Diffeo { i: usize, j: usize, delta: f64 },
    #[error("linear solver error: {0}")]
    Solver(String),
    #[error("singular system at lambda = {re:+.4e}{im:+.4e}i (relative residual {residual:.3e})")]
    Singular { re: f64, im: f64, residual: f64 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Unsupported(_) => 2,
            Error::Geometry(_) | Error::Diffeo { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
