//! Command-line front end: the model and property file formats and the
//! experiment runner that produces CSV rows per (problem, method).

pub mod model_io;
pub mod runner;

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{context}: {source}")]
    Model {
        context: String,
        source: bounds_core::Error,
    },
    #[error("problem {problem}: {source}")]
    Run {
        problem: String,
        source: bounds_core::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
