//! A desk-scale laboratory for studying how the choice of objective function
//! shapes what a small convolutional network learns from biased data.
//!
//! The crate generates procedurally biased image datasets (a spurious color
//! attribute correlated with the class label), trains a miniature residual
//! network under six objective functions with manual backpropagation, and
//! quantifies internal representation structure with Centered Kernel
//! Alignment, estimated full-batch or over mini-batches via the unbiased
//! HSIC statistic.
//!
//! Everything is deterministic: all randomness flows from a seeded
//! [`rng::Rng`], reductions use fixed accumulation orders, and repeated runs
//! with the same configuration produce byte-identical artifacts.
//!
//! # Modules
//!
//! - [`matrix`] / [`rng`] — dense f64 matrices and the seeded generator
//! - [`loss`] — the six objectives with analytic gradients
//! - [`nn`] — layers, manual backprop, Adam, the training loop
//! - [`data`] — biased dataset generation and the binary dataset format
//! - [`cka`] — HSIC, full-batch and mini-batch CKA, structure metrics
//! - [`harness`] — configs, experiment runner, tables, heatmaps, the CLI
//!
//! # Runnable examples
//!
//! Each major capability has a standalone example:
//!
//! ```text
//! cargo run --release --example generate_dataset   # biased data + color-only baseline
//! cargo run --release --example loss_gallery       # six losses, values and gradients
//! cargo run --release --example gradient_check     # finite-difference verification
//! cargo run --release --example train_single       # one training run, early stopping
//! cargo run --release --example cka_basics         # CKA invariances, mini-batch vs full
//! cargo run --release --example layer_similarity   # trained net -> similarity heatmap
//! cargo run --release --example sweep_small        # small sweep -> results table
//! ```
//!
//! The `biaslens` binary exposes the same pipeline as subcommands
//! (`generate`, `train`, `sweep`, `cka`, `report`, `selftest`).

pub mod cka;
pub mod data;
pub mod harness;
pub mod loss;
pub mod matrix;
pub mod nn;
pub mod rng;

use std::fmt;
use std::path::{Path, PathBuf};

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Incompatible matrix or tensor shapes; names both offending shapes.
    Shape(String),
    /// An argument violated a documented precondition.
    Argument(String),
    /// A dataset or split is unusable (empty, inconsistent).
    Data(String),
    /// An operation was called in the wrong order (e.g. backward before forward).
    State(String),
    /// Input is degenerate for the requested statistic (zero variance, zero denominator).
    Degenerate(String),
    /// A configuration file or value failed validation.
    Config(String),
    /// A serialized file is malformed; `offset` is the byte position of the problem.
    Format { offset: u64, message: String },
    /// An underlying I/O failure, with the path involved.
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    /// Exit code the CLI maps this error to: 2 for I/O and file-format
    /// failures, 1 for everything else (validation).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
