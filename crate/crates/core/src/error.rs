//! Error type shared by all solver components.

use std::fmt;

#[derive(Debug, Clone)]
pub enum Error {
    /// A precondition on an argument was violated.
    InvalidArgument(String),
    /// The mesh is geometrically unusable (degenerate triangle, bad index).
    Mesh(String),
    /// The linear solver broke down; carries the achieved relative residual.
    Solver { message: String, residual: f64 },
    /// A time step failed (Newton divergence, linear failure mid-run).
    Step { time: f64, message: String },
    /// File input/output failure with offending path.
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Mesh(msg) => write!(f, "mesh error: {msg}"),
            Error::Solver { message, residual } => {
                write!(f, "linear solver error: {message} (residual {residual:.3e})")
            }
            Error::Step { time, message } => {
                write!(f, "time step failed at t = {time}: {message}")
            }
            Error::Io { path, message } => write!(f, "i/o error on {path}: {message}"),
        }
    }
}

impl std::error::Error for Error {}
