use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::elasticnet::{fit_elasticnet, ElasticNetParams, LinearModel};
use super::svr::{fit_svr, Kernel, SvrModel, SvrParams};
use super::{LearnerError, Regressor, Result};
use crate::preprocess::{fit_standardizer, PcaBasis, PcaModel, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    ElasticNet,
    Svr,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::ElasticNet => "elasticnet",
            ModelFamily::Svr => "svr",
        }
    }
}

/// SVR kernel as it appears in a search grid. The RBF width is given
/// relative to the number of retained components: `gamma = scale / m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma_scale: f64 },
}

impl KernelSpec {
    pub fn resolve(&self, n_components: usize) -> Kernel {
        match *self {
            KernelSpec::Linear => Kernel::Linear,
            KernelSpec::Rbf { gamma_scale } => Kernel::Rbf {
                gamma: gamma_scale / n_components.max(1) as f64,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    ElasticNet { alpha: f64, l1_ratio: f64 },
    Svr { c: f64, epsilon: f64, kernel: KernelSpec },
}

impl ModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::ElasticNet { .. } => ModelFamily::ElasticNet,
            ModelSpec::Svr { .. } => ModelFamily::Svr,
        }
    }
}

/// One search candidate: PCA variance threshold plus model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pca_threshold: f64,
    pub model: ModelSpec,
}

impl PipelineConfig {
    pub fn family(&self) -> ModelFamily {
        self.model.family()
    }

    /// Numeric sort key: family, model parameters, then threshold.
    fn key(&self) -> (ModelFamily, [f64; 4]) {
        let params = match self.model {
            ModelSpec::ElasticNet { alpha, l1_ratio } => [alpha, l1_ratio, 0.0, self.pca_threshold],
            ModelSpec::Svr { c, epsilon, kernel } => {
                let g = match kernel {
                    KernelSpec::Linear => -1.0,
                    KernelSpec::Rbf { gamma_scale } => gamma_scale,
                };
                [c, epsilon, g, self.pca_threshold]
            }
        };
        (self.family(), params)
    }

    /// Total order used to break score ties deterministically.
    pub fn lexicographic_cmp(&self, other: &PipelineConfig) -> Ordering {
        let (fa, pa) = self.key();
        let (fb, pb) = other.key();
        fa.cmp(&fb).then_with(|| {
            pa.iter()
                .zip(&pb)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    }

    /// Flat string map of all hyperparameters.
    pub fn params(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("family".into(), self.family().name().into());
        map.insert("pca_threshold".into(), self.pca_threshold.to_string());
        match self.model {
            ModelSpec::ElasticNet { alpha, l1_ratio } => {
                map.insert("alpha".into(), alpha.to_string());
                map.insert("l1_ratio".into(), l1_ratio.to_string());
            }
            ModelSpec::Svr { c, epsilon, kernel } => {
                map.insert("C".into(), c.to_string());
                map.insert("epsilon".into(), epsilon.to_string());
                match kernel {
                    KernelSpec::Linear => {
                        map.insert("kernel".into(), "linear".into());
                    }
                    KernelSpec::Rbf { gamma_scale } => {
                        map.insert("kernel".into(), "rbf".into());
                        map.insert("gamma_scale".into(), gamma_scale.to_string());
                    }
                }
            }
        }
        map
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.model {
            ModelSpec::ElasticNet { alpha, l1_ratio } => {
                write!(f, "elasticnet(alpha={alpha}, l1_ratio={l1_ratio})")?
            }
            ModelSpec::Svr { c, epsilon, kernel } => match kernel {
                KernelSpec::Linear => write!(f, "svr(C={c}, epsilon={epsilon}, linear)")?,
                KernelSpec::Rbf { gamma_scale } => {
                    write!(f, "svr(C={c}, epsilon={epsilon}, rbf gamma={gamma_scale}/m)")?
                }
            },
        }
        write!(f, " pca={}", self.pca_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FittedModel {
    Linear(LinearModel),
    Svr(SvrModel),
}

impl Regressor for FittedModel {
    fn n_features(&self) -> usize {
        match self {
            FittedModel::Linear(m) => m.n_features(),
            FittedModel::Svr(m) => m.n_features(),
        }
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        match self {
            FittedModel::Linear(m) => m.predict_unchecked(x),
            FittedModel::Svr(m) => m.predict_unchecked(x),
        }
    }
}

/// Standardizer → PCA → regressor, fitted on one training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    config: PipelineConfig,
    standardizer: Standardizer,
    pca: PcaModel,
    model: FittedModel,
}

impl FittedPipeline {
    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn pca(&self) -> &PcaModel {
        &self.pca
    }

    pub fn model(&self) -> &FittedModel {
        &self.model
    }
}

impl Regressor for FittedPipeline {
    fn n_features(&self) -> usize {
        self.standardizer.mean().len()
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let z = self.standardizer.transform(x).expect("width checked");
        let scores = self.pca.transform(z.view()).expect("width checked");
        self.model.predict_unchecked(scores.view())
    }
}

/// A standardized training matrix and its principal-axis decomposition,
/// shared by every candidate trained on the same rows.
#[derive(Debug, Clone)]
pub struct PreparedFeatures {
    standardizer: Standardizer,
    standardized: Array2<f64>,
    basis: PcaBasis,
}

impl PreparedFeatures {
    pub fn new(x: ArrayView2<'_, f64>) -> Result<Self> {
        let standardizer = fit_standardizer(x)?;
        let standardized = standardizer.transform(x)?;
        let basis = PcaBasis::fit(standardized.view())?;
        Ok(PreparedFeatures {
            standardizer,
            standardized,
            basis,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.standardized.nrows()
    }

    /// PCA model for `threshold` and the training scores under it.
    pub fn project(&self, threshold: f64) -> Result<(PcaModel, Array2<f64>)> {
        let pca = self.basis.truncate(threshold)?;
        let scores = pca.transform(self.standardized.view())?;
        Ok((pca, scores))
    }

    /// Fits the model part of `config` on precomputed scores.
    pub fn fit_projected(
        &self,
        config: &PipelineConfig,
        pca: &PcaModel,
        scores: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
    ) -> Result<FittedPipeline> {
        let model = fit_model(&config.model, scores, y)?;
        Ok(FittedPipeline {
            config: *config,
            standardizer: self.standardizer.clone(),
            pca: pca.clone(),
            model,
        })
    }

    pub fn fit(&self, config: &PipelineConfig, y: ArrayView1<'_, f64>) -> Result<FittedPipeline> {
        let (pca, scores) = self.project(config.pca_threshold)?;
        self.fit_projected(config, &pca, scores.view(), y)
    }
}

fn fit_model(spec: &ModelSpec, scores: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<FittedModel> {
    match *spec {
        ModelSpec::ElasticNet { alpha, l1_ratio } => Ok(FittedModel::Linear(fit_elasticnet(
            scores,
            y,
            &ElasticNetParams::new(alpha, l1_ratio),
        )?)),
        ModelSpec::Svr { c, epsilon, kernel } => {
            let params = SvrParams::new(c, epsilon, kernel.resolve(scores.ncols()));
            Ok(FittedModel::Svr(fit_svr(scores, y, &params)?))
        }
    }
}

/// Fits the whole pipeline of `config` on `(x, y)` from scratch.
pub fn fit_pipeline(config: &PipelineConfig, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<FittedPipeline> {
    if x.nrows() != y.len() {
        return Err(LearnerError::LengthMismatch {
            x_rows: x.nrows(),
            y_len: y.len(),
        });
    }
    PreparedFeatures::new(x)?.fit(config, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pipeline_predicts_raw_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((60, 5), |(_, j)| rng.random_range(-1.0..1.0) * (j + 1) as f64 * 10.0);
        let y = Array1::from_shape_fn(60, |i| 0.01 * x[[i, 0]] - 0.02 * x[[i, 2]]);
        let config = PipelineConfig {
            pca_threshold: 1.0,
            model: ModelSpec::ElasticNet {
                alpha: 1e-6,
                l1_ratio: 0.5,
            },
        };
        let fitted = fit_pipeline(&config, x.view(), y.view()).unwrap();
        assert_eq!(fitted.pca().n_components(), 5);
        let pred = fitted.predict(x.view()).unwrap();
        let err = (&pred - &y).mapv(|e| e * e).mean().unwrap();
        assert!(err < 1e-8, "{err}");
        assert!(fitted.predict(x.slice(ndarray::s![.., ..3])).is_err());

        let json = serde_json::to_string(&fitted).unwrap();
        let back: FittedPipeline = serde_json::from_str(&json).unwrap();
        assert_eq!(back.predict(x.view()).unwrap(), pred);
    }

    #[test]
    fn gamma_scales_with_components() {
        assert_eq!(KernelSpec::Rbf { gamma_scale: 10.0 }.resolve(4), Kernel::Rbf { gamma: 2.5 });
        assert_eq!(KernelSpec::Linear.resolve(4), Kernel::Linear);
    }

    #[test]
    fn config_order_is_total() {
        let a = PipelineConfig {
            pca_threshold: 0.9,
            model: ModelSpec::ElasticNet {
                alpha: 0.1,
                l1_ratio: 0.5,
            },
        };
        let b = PipelineConfig {
            pca_threshold: 0.9,
            model: ModelSpec::Svr {
                c: 1.0,
                epsilon: 0.1,
                kernel: KernelSpec::Linear,
            },
        };
        assert_eq!(a.lexicographic_cmp(&b), Ordering::Less);
        assert_eq!(b.lexicographic_cmp(&a), Ordering::Greater);
        assert_eq!(a.lexicographic_cmp(&a), Ordering::Equal);
    }
}
