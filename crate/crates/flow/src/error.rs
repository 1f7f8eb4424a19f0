//! Error type for training and checkpoint handling.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] hazeflow_core::Error),
    #[error("corrupt checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },
    #[error("invalid training setup: {0}")]
    InvalidSetup(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
