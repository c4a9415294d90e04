//! Slow, independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

fn to_na(x: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}

/// ElasticNet objective minimum by enumeration of all `3^m` sign patterns.
///
/// For a fixed pattern the penalty is smooth and the stationary point solves
/// a ridge-like linear system. Every solution is scored with the true
/// objective, so infeasible patterns only yield upper bounds.
pub fn elasticnet_by_sign_patterns(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alpha: f64,
    l1_ratio: f64,
) -> (Array1<f64>, f64, f64) {
    let (n, m) = x.dim();
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..m).map(|j| x.column(j).sum() / nf).collect();
    let y_mean = y.sum() / nf;
    let xc = DMatrix::from_fn(n, m, |i, j| x[[i, j]] - x_mean[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] - y_mean);
    let objective = |w: &DVector<f64>| {
        let r = &yc - &xc * w;
        r.norm_squared() / (2.0 * nf)
            + alpha * (l1_ratio * w.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * (1.0 - l1_ratio) * w.norm_squared())
    };
    let mut best_w = DVector::zeros(m);
    let mut best = objective(&best_w);
    let mut pattern = vec![0i8; m];
    loop {
        let active: Vec<usize> = (0..m).filter(|&j| pattern[j] != 0).collect();
        if !active.is_empty() {
            let k = active.len();
            let xa = DMatrix::from_fn(n, k, |i, a| xc[(i, active[a])]);
            let mut lhs = xa.transpose() * &xa / nf;
            for d in 0..k {
                lhs[(d, d)] += alpha * (1.0 - l1_ratio);
            }
            let mut rhs = xa.transpose() * &yc / nf;
            for (a, &j) in active.iter().enumerate() {
                rhs[a] -= alpha * l1_ratio * pattern[j] as f64;
            }
            if let Some(sol) = lhs.lu().solve(&rhs) {
                let mut w = DVector::zeros(m);
                for (a, &j) in active.iter().enumerate() {
                    w[j] = sol[a];
                }
                let obj = objective(&w);
                if obj < best {
                    best = obj;
                    best_w = w;
                }
            }
        }
        // next pattern in {-1, 0, 1}^m
        let mut j = 0;
        while j < m {
            pattern[j] = match pattern[j] {
                0 => 1,
                1 => -1,
                _ => 0,
            };
            if pattern[j] != 0 {
                break;
            }
            j += 1;
        }
        if j == m {
            break;
        }
    }
    let intercept = y_mean - (0..m).map(|j| x_mean[j] * best_w[j]).sum::<f64>();
    (Array1::from_iter(best_w.iter().copied()), intercept, best)
}

/// Minimum of the ε-SVR dual
/// `½βᵀKβ + ε‖β‖₁ − yᵀβ` s.t. `Σβ = 0`, `|β| ≤ C`, with `β = α − α*`.
///
/// Each variable is at `−C`, free negative, `0`, free positive or `C`; for
/// every one of the `5^n` patterns the free variables solve the equality-
/// constrained stationarity system. Feasible solutions are scored with the
/// true objective and the smallest wins.
pub fn svr_dual_by_enumeration(k: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, c: f64, eps: f64) -> (Array1<f64>, f64) {
    let n = y.len();
    let objective = |beta: &[f64]| {
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += beta[i] * beta[j] * k[[i, j]];
            }
        }
        0.5 * q + beta.iter().zip(y).map(|(b, yi)| eps * b.abs() - yi * b).sum::<f64>()
    };
    let mut best = (vec![0.0; n], objective(&vec![0.0; n]));
    let mut state = vec![0u8; n];
    let total = 5usize.pow(n as u32);
    for code in 0..total {
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 5) as u8;
            rest /= 5;
        }
        let mut beta = vec![0.0; n];
        let mut free = Vec::new();
        let mut sign = vec![0.0; n];
        for i in 0..n {
            match state[i] {
                0 => beta[i] = -c,
                1 => {
                    free.push(i);
                    sign[i] = -1.0;
                }
                2 => {}
                3 => {
                    free.push(i);
                    sign[i] = 1.0;
                }
                _ => beta[i] = c,
            }
        }
        let fixed_sum: f64 = beta.iter().sum();
        if free.is_empty() {
            if fixed_sum.abs() < 1e-12 {
                let obj = objective(&beta);
                if obj < best.1 {
                    best = (beta, obj);
                }
            }
            continue;
        }
        let f = free.len();
        let mut lhs = DMatrix::zeros(f + 1, f + 1);
        let mut rhs = DVector::zeros(f + 1);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                lhs[(a, b)] = k[[i, j]];
            }
            lhs[(a, f)] = 1.0;
            lhs[(f, a)] = 1.0;
            let fixed_part: f64 = (0..n).map(|j| k[[i, j]] * beta[j]).sum();
            rhs[a] = y[i] - eps * sign[i] - fixed_part;
        }
        rhs[f] = -fixed_sum;
        let Some(sol) = lhs.lu().solve(&rhs) else { continue };
        let feasible = free
            .iter()
            .enumerate()
            .all(|(a, &i)| sol[a] * sign[i] >= -1e-12 && sol[a].abs() <= c + 1e-12);
        if !feasible {
            continue;
        }
        for (a, &i) in free.iter().enumerate() {
            beta[i] = sol[a].clamp(-c, c);
        }
        if beta.iter().sum::<f64>().abs() > 1e-9 {
            continue;
        }
        let obj = objective(&beta);
        if obj < best.1 {
            best = (beta, obj);
        }
    }
    (Array1::from(best.0), best.1)
}

/// Explained-variance ratios and principal axes from the eigendecomposition
/// of the sample covariance, largest first.
pub fn pca_by_covariance(x: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let (n, f) = x.dim();
    let xm = to_na(x);
    let mean = xm.row_mean();
    let mut centred = xm.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let ratios = Array1::from_iter(values.iter().map(|v| v / total));
    let axes = Array2::from_shape_fn((f, f), |(r, c)| eig.eigenvectors[(c, order[r])]);
    (ratios, axes)
}

/// Ward agglomeration that recomputes every merge cost from the raw points.
///
/// Returns the executed merges as `(first, second, cost)`, clusters named by
/// their smallest member, and the final partition numbered by name.
pub fn ward_by_recomputation(points: ArrayView2<'_, f64>, min_size: usize) -> (Vec<(usize, usize, f64)>, Vec<usize>) {
    let n = points.nrows();
    let dim = points.ncols();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let ss = |members: &[usize]| {
        let mut centre = vec![0.0; dim];
        for &i in members {
            for d in 0..dim {
                centre[d] += points[[i, d]];
            }
        }
        for c in centre.iter_mut() {
            *c /= members.len() as f64;
        }
        members
            .iter()
            .map(|&i| (0..dim).map(|d| (points[[i, d]] - centre[d]).powi(2)).sum::<f64>())
            .sum::<f64>()
    };
    let mut merges = Vec::new();
    while clusters.iter().any(|c| c.len() < min_size) && clusters.len() > 1 {
        clusters.sort_by_key(|c| c[0]);
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                if clusters[a].len() >= min_size && clusters[b].len() >= min_size {
                    continue;
                }
                let mut union = clusters[a].clone();
                union.extend(&clusters[b]);
                let cost = ss(&union) - ss(&clusters[a]) - ss(&clusters[b]);
                if best.is_none_or(|(bc, _, _)| cost < bc) {
                    best = Some((cost, a, b));
                }
            }
        }
        let (cost, a, b) = best.expect("an undersized cluster has a partner");
        let (first, second) = (clusters[a][0], clusters[b][0]);
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
        merges.push((first, second, cost));
    }
    clusters.sort_by_key(|c| c[0]);
    let mut cluster_of = vec![0; n];
    for (id, c) in clusters.iter().enumerate() {
        for &i in c {
            cluster_of[i] = id;
        }
    }
    (merges, cluster_of)
}
