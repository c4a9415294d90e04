use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{FittedPipeline, LearnerError, Regressor, Result};

/// Weighted mean of member predictions; weights are normalized to sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel<M = FittedPipeline> {
    members: Vec<M>,
    weights: Vec<f64>,
}

impl<M: Regressor> EnsembleModel<M> {
    pub fn new(members: Vec<M>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() || members.len() != weights.len() {
            return Err(LearnerError::EmptyEnsemble);
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LearnerError::InvalidParameter("ensemble weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(LearnerError::EmptyEnsemble);
        }
        let width = members[0].n_features();
        if let Some(m) = members.iter().find(|m| m.n_features() != width) {
            return Err(LearnerError::DimensionMismatch {
                expected: width,
                got: m.n_features(),
            });
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(EnsembleModel { members, weights })
    }

    pub fn members(&self) -> &[M] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl<M: Regressor> Regressor for EnsembleModel<M> {
    fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(x.nrows());
        for (m, &w) in self.members.iter().zip(&self.weights) {
            if w > 0.0 {
                out.scaled_add(w, &m.predict_unchecked(x));
            }
        }
        out
    }
}
