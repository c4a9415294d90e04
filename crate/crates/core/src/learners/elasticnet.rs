//! ElasticNet regression by cyclic coordinate descent.
//!
//! Minimizes
//!
//! ```text
//! (1/(2n))·‖y − Xw − b‖² + alpha·(l1_ratio·‖w‖₁ + ½(1 − l1_ratio)·‖w‖²)
//! ```
//!
//! The intercept is unpenalized and eliminated by centring `X` and `y`;
//! coordinates are visited in index order and updated in closed form with
//! soft-thresholding.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use serde::{Deserialize, Serialize};

use super::{check_xy, LearnerError, Regressor, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetParams {
    pub alpha: f64,
    pub l1_ratio: f64,
    /// Stop once no coefficient moves by more than this in a sweep.
    pub tol: f64,
    pub max_iter: usize,
}

impl ElasticNetParams {
    pub fn new(alpha: f64, l1_ratio: f64) -> Self {
        ElasticNetParams {
            alpha,
            l1_ratio,
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    weights: Array1<f64>,
    intercept: f64,
    alpha: f64,
    l1_ratio: f64,
    n_iter: usize,
    converged: bool,
}

impl LinearModel {
    pub fn new(weights: Array1<f64>, intercept: f64) -> Self {
        LinearModel {
            weights,
            intercept,
            alpha: 0.0,
            l1_ratio: 0.0,
            n_iter: 0,
            converged: true,
        }
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn l1_ratio(&self) -> f64 {
        self.l1_ratio
    }

    /// Number of full coordinate sweeps performed.
    pub fn n_iter(&self) -> usize {
        self.n_iter
    }

    /// False when `max_iter` was reached before the tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }
}

impl Regressor for LinearModel {
    fn n_features(&self) -> usize {
        self.weights.len()
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.intercept
    }
}

/// `sign(z)·max(|z| − gamma, 0)`
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Value of the ElasticNet objective at `(w, b)`.
pub fn elasticnet_objective(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    b: f64,
    alpha: f64,
    l1_ratio: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let resid = &y - &(x.dot(&w) + b);
    let loss = resid.dot(&resid) / (2.0 * n);
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    let l2 = w.dot(&w);
    loss + alpha * (l1_ratio * l1 + 0.5 * (1.0 - l1_ratio) * l2)
}

pub fn fit_elasticnet(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, params: &ElasticNetParams) -> Result<LinearModel> {
    coordinate_descent(x, y, params, None)
}

/// As [`fit_elasticnet`], also returning the objective after every sweep
/// (entry 0 is the starting point `w = 0`).
pub fn fit_elasticnet_traced(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    params: &ElasticNetParams,
) -> Result<(LinearModel, Vec<f64>)> {
    let mut trace = Vec::new();
    let model = coordinate_descent(x, y, params, Some(&mut trace))?;
    Ok((model, trace))
}

fn coordinate_descent(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    params: &ElasticNetParams,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<LinearModel> {
    check_xy(x, y, 1)?;
    let ElasticNetParams {
        alpha,
        l1_ratio,
        tol,
        max_iter,
    } = *params;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(LearnerError::InvalidParameter(format!("alpha = {alpha}")));
    }
    if !(0.0..=1.0).contains(&l1_ratio) {
        return Err(LearnerError::InvalidParameter(format!("l1_ratio = {l1_ratio}")));
    }
    let (n, m) = x.dim();
    let nf = n as f64;
    let x_mean = x.mean_axis(Axis(0)).expect("n >= 1");
    let y_mean = y.mean().expect("n >= 1");

    // Column-major copy of the centred design for contiguous column access.
    let mut xc = ndarray::Array2::zeros((n, m).f());
    xc.assign(&(&x - &x_mean));
    let yc = &y - y_mean;
    let col_sq: Vec<f64> = xc.axis_iter(Axis(1)).map(|c| c.dot(&c) / nf).collect();

    let l1_pen = alpha * l1_ratio;
    let l2_pen = alpha * (1.0 - l1_ratio);
    let mut w = Array1::<f64>::zeros(m);
    let mut resid = yc.clone();

    let centred_objective = |w: &Array1<f64>, resid: &Array1<f64>| {
        resid.dot(resid) / (2.0 * nf) + l1_pen * w.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * l2_pen * w.dot(w)
    };
    if let Some(t) = trace.as_deref_mut() {
        t.push(centred_objective(&w, &resid));
    }

    let mut converged = m == 0;
    let mut sweeps = 0;
    while !converged && sweeps < max_iter {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for j in 0..m {
            let col = xc.column(j);
            let old = w[j];
            let denom = col_sq[j] + l2_pen;
            let new = if denom > 0.0 {
                let rho = col.dot(&resid) / nf + col_sq[j] * old;
                soft_threshold(rho, l1_pen) / denom
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                resid.scaled_add(-delta, &col);
                w[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(centred_objective(&w, &resid));
        }
        converged = max_delta < tol;
    }
    if !converged {
        log::warn!("elasticnet (alpha={alpha}, l1_ratio={l1_ratio}) stopped after {sweeps} sweeps without converging");
    }
    let intercept = y_mean - x_mean.dot(&w);
    Ok(LinearModel {
        weights: w,
        intercept,
        alpha,
        l1_ratio,
        n_iter: sweeps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(alpha: f64) -> ElasticNetParams {
        ElasticNetParams {
            alpha,
            l1_ratio: 0.5,
            tol: 1e-12,
            max_iter: 100_000,
        }
    }

    #[test]
    fn interpolates_without_penalty() {
        let x = array![[1.0], [-1.0]];
        let y = array![1.0, -1.0];
        let m = fit_elasticnet(x.view(), y.view(), &exact(0.0)).unwrap();
        assert!((m.weights()[0] - 1.0).abs() < 1e-12);
        assert!(m.intercept().abs() < 1e-12);
        assert!(m.converged());
    }

    #[test]
    fn huge_penalty_gives_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((20, 4), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(20, |_| rng.random_range(-1.0..1.0));
        let m = fit_elasticnet(x.view(), y.view(), &ElasticNetParams::new(1e6, 0.5)).unwrap();
        assert!(m.weights().iter().all(|&w| w == 0.0));
        assert!((m.intercept() - y.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((30, 6), |_| rng.random_range(-2.0..2.0));
        let y = Array1::from_shape_fn(30, |i| x[[i, 0]] - 0.5 * x[[i, 3]] + rng.random_range(-0.1..0.1));
        for l1 in [0.0, 0.3, 1.0] {
            let params = ElasticNetParams {
                l1_ratio: l1,
                ..exact(0.05)
            };
            let (_, trace) = fit_elasticnet_traced(x.view(), y.view(), &params).unwrap();
            assert!(trace.len() > 2);
            for pair in trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-15 * pair[0].abs());
            }
        }
    }

    #[test]
    fn reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((30, 5), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(30, |_| rng.random_range(-1.0..1.0));
        let params = ElasticNetParams {
            max_iter: 1,
            ..exact(1e-3)
        };
        let m = fit_elasticnet(x.view(), y.view(), &params).unwrap();
        assert!(!m.converged());
        assert_eq!(m.n_iter(), 1);
    }

    #[test]
    fn input_errors() {
        let x = array![[1.0], [f64::NAN]];
        let y = array![1.0, 2.0];
        assert_eq!(
            fit_elasticnet(x.view(), y.view(), &exact(0.1)),
            Err(LearnerError::NonFiniteInput("features"))
        );
        let x = array![[1.0], [2.0]];
        assert!(fit_elasticnet(x.view(), array![1.0].view(), &exact(0.1)).is_err());
        assert!(fit_elasticnet(x.view(), y.view(), &ElasticNetParams::new(-1.0, 0.5)).is_err());
        assert!(fit_elasticnet(x.view(), y.view(), &ElasticNetParams::new(1.0, 1.5)).is_err());
    }

    #[test]
    fn predicts_affine() {
        let m = LinearModel::new(array![2.0], 1.0);
        assert_eq!(m.predict(array![[3.0]].view()).unwrap().to_vec(), vec![7.0]);
        assert!(m.predict(array![[3.0, 1.0]].view()).is_err());
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        assert_eq!(soft_threshold(1.0, 2.0), 0.0);
    }
}
