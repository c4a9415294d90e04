//! Metrics, the outer cross-validation protocol and report exports.
//!
//! Every fold trains on a `(k, p)` mixture of the two datasets' training
//! portions and is tested separately on each dataset's own, unmixed test
//! fold.

use ndarray::ArrayView1;
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::learners::LearnerError;
use crate::mixing::MixingError;
use crate::search::SearchError;
use crate::stratification::StratificationError;

mod protocol;
mod report;

pub use protocol::{
    cross_validate, cross_validate_with, run_kp_sweep, run_randomized_baseline, select_once, Corpus, CvSettings,
    DatasetRecord, FoldRecord, ReportManifest, SelectionMode, SelectionRecord,
};
pub use report::{
    aggregate, format_sci, format_short, read_tsv, table_by_spec, table_summary, write_tsv, Aggregate, CvReport,
    MeanStd, Metric, MetricRecord, TSV_HEADER,
};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("prediction has {pred} values for {truth} targets")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("empty vector")]
    EmptyVector,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("truth vector has zero variance; r2 is undefined")]
    ZeroVarianceTruth,
    #[error("dataset {domain:?}: {reason}")]
    InvalidCorpus { domain: String, reason: String },
    #[error("fold {fold}: {count} training samples also appear in the test fold (e.g. {example})")]
    Leakage {
        fold: usize,
        count: usize,
        example: String,
    },
    #[error("invalid evaluation settings: {0}")]
    InvalidSettings(String),
    #[error("malformed report: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Stratification(#[from] StratificationError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

pub type Result<T> = std::result::Result<T, EvaluationError>;

fn check(truth: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(EvaluationError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvaluationError::EmptyVector);
    }
    if !truth.iter().all(|v| v.is_finite()) {
        return Err(EvaluationError::NonFinite("truth"));
    }
    if !pred.iter().all(|v| v.is_finite()) {
        return Err(EvaluationError::NonFinite("prediction"));
    }
    Ok(())
}

fn sum_sq_err(truth: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>) -> f64 {
    truth.iter().zip(pred.iter()).map(|(t, p)| (t - p) * (t - p)).sum()
}

pub fn mse(truth: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>) -> Result<f64> {
    check(truth, pred)?;
    Ok(sum_sq_err(truth, pred) / truth.len() as f64)
}

pub fn rmse(truth: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>) -> Result<f64> {
    mse(truth, pred).map(f64::sqrt)
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(truth: ArrayView1<'_, f64>, pred: ArrayView1<'_, f64>) -> Result<f64> {
    check(truth, pred)?;
    let mean = truth.sum() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvaluationError::ZeroVarianceTruth);
    }
    Ok(1.0 - sum_sq_err(truth, pred) / ss_tot)
}
