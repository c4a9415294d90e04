//! The regression model family and its composition into pipelines.

use ndarray::{Array1, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::preprocess::PreprocessError;

mod elasticnet;
mod ensemble;
mod pipeline;
mod svr;

pub use elasticnet::{
    elasticnet_objective, fit_elasticnet, fit_elasticnet_traced, soft_threshold, ElasticNetParams, LinearModel,
};
pub use ensemble::EnsembleModel;
pub use pipeline::{
    fit_pipeline, FittedModel, FittedPipeline, KernelSpec, ModelFamily, ModelSpec, PipelineConfig, PreparedFeatures,
};
pub use svr::{fit_svr, solve_svr_dual, Kernel, SvrDual, SvrModel, SvrParams};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LearnerError {
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{got} samples, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
    #[error("{x_rows} feature rows but {y_len} targets")]
    LengthMismatch { x_rows: usize, y_len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("an ensemble needs at least one member with positive weight")]
    EmptyEnsemble,
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

pub type Result<T> = std::result::Result<T, LearnerError>;

/// Anything that maps a feature matrix to one prediction per row.
pub trait Regressor {
    fn n_features(&self) -> usize;

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64>;

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features() {
            return Err(LearnerError::DimensionMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        Ok(self.predict_unchecked(x))
    }
}

fn check_xy(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, min_rows: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(LearnerError::LengthMismatch {
            x_rows: x.nrows(),
            y_len: y.len(),
        });
    }
    if x.nrows() < min_rows {
        return Err(LearnerError::TooFewSamples {
            got: x.nrows(),
            need: min_rows,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFiniteInput("features"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFiniteInput("targets"));
    }
    Ok(())
}
