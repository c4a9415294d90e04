//! Feature standardization and principal component analysis.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PreprocessError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("variance threshold {0} outside (0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("input has zero total variance")]
    ZeroVariance,
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular value decomposition failed")]
    Decomposition,
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Standard deviations below this are treated as constant columns.
pub const STD_FLOOR: f64 = 1e-12;

/// Column-wise centering and scaling to unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    /// Divisor applied to each centred column; 1 for constant columns.
    pub fn scale(&self) -> &Array1<f64> {
        &self.scale
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        apply_standardizer(self, x)
    }
}

pub fn fit_standardizer(x: ArrayView2<'_, f64>) -> Result<Standardizer> {
    let n = x.nrows();
    if n < 2 {
        return Err(PreprocessError::TooFewRows(n));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let scale = x
        .axis_iter(Axis(1))
        .zip(mean.iter())
        .map(|(col, &m)| {
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            // Constant columns: keep them centred at 0 without blowing up
            // unseen rows.
            if sd < STD_FLOOR {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(Standardizer { mean, scale })
}

pub fn apply_standardizer(s: &Standardizer, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_columns(s.mean.len(), x.ncols())?;
    let mut out = x.to_owned();
    out -= &s.mean;
    out /= &s.scale;
    Ok(out)
}

fn check_columns(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(PreprocessError::DimensionMismatch { expected, got })
    }
}

/// Complete principal-axis decomposition of a training matrix, from which
/// models for any variance threshold can be cut without refitting.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    mean: Array1<f64>,
    /// `r × F`, rows ordered by decreasing singular value.
    axes: Array2<f64>,
    singular_values: Array1<f64>,
    n_samples: usize,
}

impl PcaBasis {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        let (n, f) = x.dim();
        if n < 2 {
            return Err(PreprocessError::TooFewRows(n));
        }
        let mean = x.mean_axis(Axis(0)).expect("n >= 2");
        let centered = &x - &mean;
        let rank_bound = (n - 1).min(f);

        let (mut singular, mut axes) = if n >= f {
            thin_svd_axes(&centered)?
        } else {
            gram_axes(&centered)?
        };

        // Sort by decreasing singular value.
        let mut order: Vec<usize> = (0..singular.len()).collect();
        order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]).then(a.cmp(&b)));
        order.truncate(rank_bound);
        singular = order.iter().map(|&i| singular[i]).collect();
        axes = axes.select(Axis(0), &order);

        for mut axis in axes.axis_iter_mut(Axis(0)) {
            let mut pivot = 0;
            for (j, v) in axis.iter().enumerate() {
                if v.abs() > axis[pivot].abs() {
                    pivot = j;
                }
            }
            if axis[pivot] < 0.0 {
                axis.mapv_inplace(|v| -v);
            }
        }
        let total: f64 = singular.iter().map(|s| s * s).sum();
        if total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(PreprocessError::ZeroVariance);
        }
        Ok(PcaBasis {
            mean,
            axes,
            singular_values: Array1::from(singular),
            n_samples: n,
        })
    }

    pub fn explained_variance_ratio(&self) -> Array1<f64> {
        let sq = self.singular_values.mapv(|s| s * s);
        let total = sq.sum();
        sq / total
    }

    pub fn explained_variance(&self) -> Array1<f64> {
        self.singular_values.mapv(|s| s * s / (self.n_samples - 1) as f64)
    }

    /// Smallest component count whose cumulative ratio reaches `threshold`.
    pub fn n_components_for(&self, threshold: f64) -> Result<usize> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(PreprocessError::ThresholdOutOfRange(threshold));
        }
        let ratios = self.explained_variance_ratio();
        let mut cumulative = 0.0;
        for (i, r) in ratios.iter().enumerate() {
            cumulative += r;
            // Absorb summation round-off so that threshold 1.0 stops at the rank.
            if cumulative + 1e-12 >= threshold {
                return Ok(i + 1);
            }
        }
        Ok(ratios.len())
    }

    pub fn truncate(&self, threshold: f64) -> Result<PcaModel> {
        let m = self.n_components_for(threshold)?;
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.axes.slice(ndarray::s![..m, ..]).to_owned(),
            explained_variance_ratio: self.explained_variance_ratio(),
            threshold,
        })
    }
}

fn to_nalgebra(x: &Array2<f64>) -> DMatrix<f64> {
    let (n, f) = x.dim();
    DMatrix::from_fn(n, f, |i, j| x[[i, j]])
}

/// Right singular vectors from a thin SVD of the centred matrix.
fn thin_svd_axes(centered: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let svd = SVD::try_new(to_nalgebra(centered), false, true, f64::EPSILON, 0)
        .ok_or(PreprocessError::Decomposition)?;
    let v_t = svd.v_t.ok_or(PreprocessError::Decomposition)?;
    let axes = Array2::from_shape_fn((v_t.nrows(), v_t.ncols()), |(i, j)| v_t[(i, j)]);
    Ok((svd.singular_values.iter().copied().collect(), axes))
}

/// Wide matrices (`n < F`): left singular vectors from the `n × n` Gram
/// matrix, right singular vectors recovered as `Xᵀu / σ`.
fn gram_axes(centered: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let gram = centered.dot(&centered.t());
    let eig = SymmetricEigen::try_new(to_nalgebra(&gram), f64::EPSILON, 0).ok_or(PreprocessError::Decomposition)?;
    let n = gram.nrows();
    let f = centered.ncols();
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut singular = Vec::with_capacity(n);
    let mut axes = Array2::zeros((n, f));
    for k in 0..n {
        let lambda = eig.eigenvalues[k].max(0.0);
        let s = lambda.sqrt();
        singular.push(s);
        if lambda <= top * 1e-14 {
            continue;
        }
        let u = Array1::from_iter((0..n).map(|i| eig.eigenvectors[(i, k)]));
        let v = centered.t().dot(&u) / s;
        axes.row_mut(k).assign(&v);
    }
    Ok((singular, axes))
}

/// Projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Array1<f64>,
    /// `m × F`, orthonormal rows.
    components: Array2<f64>,
    explained_variance_ratio: Array1<f64>,
    threshold: f64,
}

impl PcaModel {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn explained_variance_ratio(&self) -> &Array1<f64> {
        &self.explained_variance_ratio
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        apply_pca(self, x)
    }

    /// Maps scores back to the (centred-then-restored) input space.
    pub fn inverse_transform(&self, scores: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_columns(self.n_components(), scores.ncols())?;
        Ok(scores.dot(&self.components) + &self.mean)
    }
}

pub fn fit_pca(x: ArrayView2<'_, f64>, threshold: f64) -> Result<PcaModel> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PreprocessError::ThresholdOutOfRange(threshold));
    }
    PcaBasis::fit(x)?.truncate(threshold)
}

pub fn apply_pca(model: &PcaModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_columns(model.mean.len(), x.ncols())?;
    Ok((&x - &model.mean).dot(&model.components.t()))
}
