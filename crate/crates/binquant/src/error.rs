use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad config, flags or input files. Exit code 1.
    User,
    /// Broken internal invariant. Exit code 2.
    Internal,
}

/// A failed run: which stage failed and why, on a single line.
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct RunError {
    pub stage: &'static str,
    pub kind: ErrorKind,
    pub message: String,
}

impl RunError {
    pub fn user(stage: &'static str, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: ErrorKind::User,
            message: one_line(message),
        }
    }

    pub fn internal(stage: &'static str, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind: ErrorKind::Internal,
            message: one_line(message),
        }
    }

    /// Core errors are user errors except a non-finite objective mid-solve.
    pub fn core(stage: &'static str, e: binquant_core::Error) -> Self {
        match e {
            binquant_core::Error::NonFiniteObjective { .. } => Self::internal(stage, e),
            _ => Self::user(stage, e),
        }
    }

    pub fn file(stage: &'static str, path: &Path, e: impl fmt::Display) -> Self {
        Self::user(stage, format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::User => 1,
            ErrorKind::Internal => 2,
        }
    }
}

fn one_line(m: impl fmt::Display) -> String {
    m.to_string().lines().collect::<Vec<_>>().join(" ")
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// Errors reading or writing a tensor file.
#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        source: binquant_core::tensor::TensorError,
    },
    #[error("{path}: expected {expected}")]
    Kind { path: PathBuf, expected: &'static str },
}
