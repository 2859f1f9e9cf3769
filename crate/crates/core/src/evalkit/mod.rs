//! Ranking metrics and per-condition evaluation.

mod metrics;
mod report;

use thiserror::Error;

pub use metrics::{average_precision, macro_over_tags, roc_auc, MacroScore, Metric};
pub use report::{evaluate, probe_accuracy, render_table, ConditionScore, EvalReport};

use crate::netlab::NetError;

#[derive(Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("every tag is single-class")]
    AllTagsDegenerate,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score matrix rows differ in length")]
    Ragged,
    #[error("scores must not be NaN")]
    NonFiniteScore,
    #[error("labels must be 0 or 1")]
    NonBinaryLabel,
    #[error("nothing to evaluate")]
    EmptySet,
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
