//! Metrics and the downstream evaluation protocols: linear probing,
//! semi-supervised fine-tuning, and value imputation.

pub mod impute;
pub mod metrics;
pub mod probe;
pub mod report;

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation config: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub use impute::{impute, impute_batch, ImputeSummary};
pub use metrics::{
    auc_pr, auc_roc, multilabel_aggregate, regression_errors, MultilabelSummary, RankMetric,
};
pub use probe::{
    embed_stays, linear_eval, semi_supervised, subsample_labeled, EvalPlan, Task,
    BACKBONE_LR_GRID, BATCH_GRID, HEAD_LR_GRID, MAX_EPOCH_RANGE,
};
pub use report::{MetricsReport, REPORT_VERSION};
