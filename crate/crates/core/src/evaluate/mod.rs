//! Participant-grouped cross-validation, metrics, decision-level fusion and
//! result reporting.

mod experiment;
mod metrics;
mod report;
mod split;

use thiserror::Error;

use crate::model::ModelError;
use crate::train::TrainError;

pub use experiment::{build_samples, participants_of, run_experiment, ExperimentResult, NamedLog};
pub use metrics::{confusion_metrics, decision_fuse, metrics, FoldResult, FuseRule, FusedDecision, Fusion, TIE_TOLERANCE};
pub use report::{
    combination_name, read_report_json, read_results_csv, result_rows, write_report_json, write_results_csv,
    ExperimentReport, ResultRow,
};
pub use split::{group_kfold, loso, loso_val_size, Fold, SplitPlan, SplitScheme};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{participants} participant(s); need at least {needed}")]
    TooFewParticipants { participants: usize, needed: usize },
    #[error("participant listed twice")]
    DuplicateParticipant,
    #[error("fold {fold}: leakage: {detail}")]
    Leakage { fold: usize, detail: String },
    #[error("fold {fold}: {side} side has no samples")]
    EmptySide { fold: usize, side: &'static str },
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("decision fusion needs at least 2 classifiers, got {0}")]
    NoClassifiers(usize),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("channel {channel} missing for participant {participant}, video {video}")]
    MissingChannel {
        channel: String,
        participant: String,
        video: String,
    },
    #[error("no label for participant {participant}, video {video}")]
    MissingLabel { participant: String, video: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[cfg(test)]
mod tests;
