use thiserror::Error;

use crate::dataset::DatasetError;
use crate::evaluation::EvaluationError;
use crate::learners::LearnerError;
use crate::mixing::MixingError;
use crate::preprocess::PreprocessError;
use crate::search::SearchError;
use crate::stratification::StratificationError;

pub type Result<T> = std::result::Result<T, Error>;

/// Any failure raised by one of the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Stratification(#[from] StratificationError),
    #[error(transparent)]
    Mixing(#[from] MixingError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}
