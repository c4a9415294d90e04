//! ε-insensitive support vector regression.
//!
//! The dual is written over `2n` variables `β = [α; α*]` with labels
//! `s_t = +1` for `t < n` and `s_t = −1` otherwise:
//!
//! ```text
//! min ½ βᵀQβ + pᵀβ   s.t.  sᵀβ = 0,  0 ≤ β ≤ C
//! Q_tu = s_t s_u K(x_t, x_u),  p_t = ε − s_t y_t
//! ```
//!
//! and solved by sequential minimal optimization with second-order working
//! set selection. The fitted function is `Σ (α_i − α*_i) K(x_i, x) + b`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{check_xy, LearnerError, Regressor, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match *self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                (-gamma * d2).exp()
            }
        }
    }

    /// `K[i, j] = k(a_i, b_j)`.
    pub fn matrix(&self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut k = a.dot(&b.t());
        if let Kernel::Rbf { gamma } = *self {
            let na: Vec<f64> = a.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
            let nb: Vec<f64> = b.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
            for ((i, j), v) in k.indexed_iter_mut() {
                let d2 = (na[i] + nb[j] - 2.0 * *v).max(0.0);
                *v = (-gamma * d2).exp();
            }
        }
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    /// Maximal KKT violation `m(β) − M(β)` accepted at termination.
    pub tol: f64,
    pub max_iter: usize,
}

impl SvrParams {
    pub fn new(c: f64, epsilon: f64, kernel: Kernel) -> Self {
        SvrParams {
            c,
            epsilon,
            kernel,
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

/// Full dual solution, mostly useful for checking optimality.
#[derive(Debug, Clone)]
pub struct SvrDual {
    pub alpha: Array1<f64>,
    pub alpha_star: Array1<f64>,
    /// `f(x) = Σ θ_i K(x_i, x) − rho`.
    pub rho: f64,
    /// `½ βᵀQβ + pᵀβ` at the returned point.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SvrDual {
    /// `α − α*`.
    pub fn theta(&self) -> Array1<f64> {
        &self.alpha - &self.alpha_star
    }
}

pub fn solve_svr_dual(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, params: &SvrParams) -> Result<SvrDual> {
    check_xy(x, y, 2)?;
    let SvrParams {
        c,
        epsilon,
        kernel,
        tol,
        max_iter,
    } = *params;
    if !(c > 0.0 && c.is_finite()) {
        return Err(LearnerError::InvalidParameter(format!("C = {c}")));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(LearnerError::InvalidParameter(format!("epsilon = {epsilon}")));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(LearnerError::InvalidParameter(format!("gamma = {gamma}")));
        }
    }

    let n = x.nrows();
    let l = 2 * n;
    let k = kernel.matrix(x, x);
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |t: usize, u: usize| sign(t) * sign(u) * k[[t % n, u % n]];
    let diag: Vec<f64> = (0..l).map(|t| k[[t % n, t % n]]).collect();
    let p: Vec<f64> = (0..l)
        .map(|t| if t < n { epsilon - y[t] } else { epsilon + y[t - n] })
        .collect();

    let mut beta = vec![0.0f64; l];
    let mut grad = p.clone();
    let at_upper = |b: f64| b >= c;
    let at_lower = |b: f64| b <= 0.0;

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // Working set: i maximizes −s_t ∇_t over I_up, j minimizes the
        // second-order decrease over I_low.
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..l {
            if sign(t) > 0.0 {
                if !at_upper(beta[t]) && -grad[t] >= g_max {
                    g_max = -grad[t];
                    i_sel = t;
                }
            } else if !at_lower(beta[t]) && grad[t] >= g_max {
                g_max = grad[t];
                i_sel = t;
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_drop = f64::INFINITY;
        for t in 0..l {
            let (in_low, score) = if sign(t) > 0.0 {
                (!at_lower(beta[t]), grad[t])
            } else {
                (!at_upper(beta[t]), -grad[t])
            };
            if !in_low {
                continue;
            }
            g_max2 = g_max2.max(score);
            if i_sel == usize::MAX {
                continue;
            }
            let grad_diff = g_max + score;
            if grad_diff > 0.0 {
                let mut quad = diag[i_sel] + diag[t] - 2.0 * sign(i_sel) * sign(t) * q(i_sel, t);
                if quad <= 0.0 {
                    quad = TAU;
                }
                let drop = -(grad_diff * grad_diff) / quad;
                if drop <= best_drop {
                    best_drop = drop;
                    j_sel = t;
                }
            }
        }
        if g_max + g_max2 < tol || j_sel == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (beta[i], beta[j]);
        let q_ij = q(i, j);
        if sign(i) != sign(j) {
            let mut quad = diag[i] + diag[j] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (d_i, d_j) = (beta[i] - old_i, beta[j] - old_j);
        if d_i != 0.0 || d_j != 0.0 {
            for (t, g) in grad.iter_mut().enumerate() {
                *g += q(t, i) * d_i + q(t, j) * d_j;
            }
        }
    }
    if !converged {
        log::warn!("svr solver stopped after {iterations} iterations without reaching tol={tol}");
    }

    // Offset from the free variables, or the middle of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut n_free) = (0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if at_upper(beta[t]) {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower(beta[t]) {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            free_sum += yg;
        }
    }
    let rho = if n_free > 0 {
        free_sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = (0..l).map(|t| beta[t] * (grad[t] + p[t])).sum::<f64>() / 2.0;
    Ok(SvrDual {
        alpha: Array1::from_iter(beta[..n].iter().copied()),
        alpha_star: Array1::from_iter(beta[n..].iter().copied()),
        rho,
        objective,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    support_ids: Vec<usize>,
    support_vectors: Array2<f64>,
    dual_coefs: Array1<f64>,
    intercept: f64,
    kernel: Kernel,
    c: f64,
    epsilon: f64,
    converged: bool,
}

impl SvrModel {
    /// Training-row indices with a nonzero dual coefficient.
    pub fn support_ids(&self) -> &[usize] {
        &self.support_ids
    }

    pub fn support_vectors(&self) -> &Array2<f64> {
        &self.support_vectors
    }

    /// `α_i − α*_i` for every support vector.
    pub fn dual_coefs(&self) -> &Array1<f64> {
        &self.dual_coefs
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// False when the iteration cap stopped the solver.
    pub fn converged(&self) -> bool {
        self.converged
    }
}

impl Regressor for SvrModel {
    fn n_features(&self) -> usize {
        self.support_vectors.ncols()
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        if self.support_ids.is_empty() {
            return Array1::from_elem(x.nrows(), self.intercept);
        }
        self.kernel.matrix(x, self.support_vectors.view()).dot(&self.dual_coefs) + self.intercept
    }
}

pub fn fit_svr(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, params: &SvrParams) -> Result<SvrModel> {
    let dual = solve_svr_dual(x, y, params)?;
    let theta = dual.theta();
    let support_ids: Vec<usize> = (0..theta.len()).filter(|&i| theta[i] != 0.0).collect();
    Ok(SvrModel {
        support_vectors: x.select(Axis(0), &support_ids),
        dual_coefs: support_ids.iter().map(|&i| theta[i]).collect(),
        support_ids,
        intercept: -dual.rho,
        kernel: params.kernel,
        c: params.c,
        epsilon: params.epsilon,
        converged: dual.converged,
    })
}
