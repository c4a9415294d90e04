//! # affectmix
//!
//! Multi-domain valence/arousal regression on precomputed acoustic features.
//!
//! Two labeled sound corpora (a general-sound role `A` and a music role `B`)
//! are clustered in label space with Ward linkage, split into stratified
//! folds, and mixed into training sets of `k·|A| + p·|B|` samples. Each
//! candidate pipeline standardizes the features, projects them onto the
//! principal components that reach a cumulative explained-variance
//! threshold, and fits either an ElasticNet or an ε-SVR regressor.
//! Hyperparameters are chosen by successive halving, the best pipelines can
//! be combined by greedy forward ensemble selection, and every result is
//! reported per test domain on the original, unmixed test folds.
//!
//! The crate is organised by stage:
//!
//! * [`dataset`]: CSV ingestion, validation and label rescaling
//! * [`stratification`]: Ward clustering, stratified folds and sub-sampling
//! * [`mixing`]: `(k, p)` training-set composition and randomized labels
//! * [`preprocess`]: standardization and PCA
//! * [`learners`]: ElasticNet, ε-SVR, pipelines and ensembles
//! * [`search`]: successive halving and greedy ensemble selection
//! * [`evaluation`]: metrics, cross-validation, sweeps and report exports
//! * [`synthetic`]: a generative two-domain benchmark with known structure

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod learners;
pub mod mixing;
pub mod preprocess;
pub mod search;
pub mod seeding;
pub mod stratification;
pub mod synthetic;

pub use dataset::{LabelScale, LabeledDataset, SampleId, Target};
pub use error::{Error, Result};
pub use mixing::{MixSpec, MixedDataset};
pub use stratification::{ClusterAssignment, FoldPlan};
