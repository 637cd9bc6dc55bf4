//! Inference-time evaluation: k-means over encoder features, optimal
//! assignment accuracy, Old/New/All decomposition, and CSV report export.

mod assignment;
mod kmeans;
mod report;

pub use assignment::{brute_force_acc, hungarian_acc, subset_acc};
pub use kmeans::{kmeans_cluster, ClusterAssignment, KmeansConfig, KmeansInit};
pub use report::{
    session_report, write_confusion_csv, write_summary_csv, EvalReport, EvalSettings,
};

use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("k = {k} exceeds the {n} available instances")]
    KTooLarge { k: usize, n: usize },
    #[error("label vectors have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}
