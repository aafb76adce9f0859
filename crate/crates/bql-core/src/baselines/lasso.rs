//! Lasso via cyclic coordinate descent.
//!
//! Minimizes `(1/2n) ||y - X b||^2 + penalty * sum_j |b_j|` with columns
//! standardized to unit root-mean-square internally and coefficients
//! returned on the original scale. No column is centered and every column
//! is penalized, so the solver applies unchanged to residual-on-residual
//! designs where no true intercept exists. A zero penalty falls back to the
//! minimum-norm least-squares solution.

use crate::error::{Error, Result};
use crate::regress::{dot, ols};

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub penalty: f64,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_ITER: usize = 10_000;
const TOL: f64 = 1e-10;

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Root-mean-square scale of each column, floored away from zero.
fn column_scales(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len() as f64;
    let p = x[0].len();
    (0..p)
        .map(|j| (x.iter().map(|r| r[j] * r[j]).sum::<f64>() / n).sqrt().max(1e-12))
        .collect()
}

pub fn lasso_fit(x: &[Vec<f64>], y: &[f64], penalty: f64) -> Result<LassoFit> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Dimension("lasso needs matching non-empty inputs".into()));
    }
    if penalty.is_nan() || penalty < 0.0 {
        return Err(Error::Config("lasso penalty must be nonnegative".into()));
    }
    if penalty == 0.0 {
        let fit = ols(x, y)?;
        return Ok(LassoFit { coefficients: fit.coefficients, penalty, iterations: 0, converged: true });
    }
    let n = x.len();
    let p = x[0].len();
    let scales = column_scales(x);
    let xs: Vec<Vec<f64>> =
        x.iter().map(|r| r.iter().zip(&scales).map(|(v, s)| v / s).collect()).collect();

    let mut beta = vec![0.0; p];
    let mut resid = y.to_vec();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let old = beta[j];
            // rho_j = (1/n) x_j' (r + x_j * old); unit column norms make the
            // coordinate update a plain soft threshold.
            let mut rho = 0.0;
            let mut col_sq = 0.0;
            for (i, row) in xs.iter().enumerate() {
                rho += row[j] * (resid[i] + row[j] * old);
                col_sq += row[j] * row[j];
            }
            rho /= n as f64;
            let denom = col_sq / n as f64;
            let new = if denom <= 1e-12 { 0.0 } else { soft_threshold(rho, penalty) / denom };
            if new != old {
                let delta = new - old;
                for (i, row) in xs.iter().enumerate() {
                    resid[i] -= delta * row[j];
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < TOL {
            converged = true;
            break;
        }
    }
    let coefficients: Vec<f64> = beta.iter().zip(&scales).map(|(b, s)| b / s).collect();
    Ok(LassoFit { coefficients, penalty, iterations, converged })
}

/// Subgradient of the standardized objective at the fit, for optimality
/// checks: `(1/n) Xs' (y - Xs b)` per column.
pub fn lasso_gradient(x: &[Vec<f64>], y: &[f64], fit: &LassoFit) -> Vec<f64> {
    let n = x.len();
    let p = x[0].len();
    let scales = column_scales(x);
    let beta_std: Vec<f64> = fit.coefficients.iter().zip(&scales).map(|(b, s)| b * s).collect();
    let mut grad = vec![0.0; p];
    for row in x.iter().zip(y) {
        let (r, &yi) = row;
        let rs: Vec<f64> = r.iter().zip(&scales).map(|(v, s)| v / s).collect();
        let e = yi - dot(&rs, &beta_std);
        for j in 0..p {
            grad[j] += rs[j] * e;
        }
    }
    for g in grad.iter_mut() {
        *g /= n as f64;
    }
    grad
}

/// Smallest penalty that zeroes every coefficient.
pub fn penalty_max(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let scales = column_scales(x);
    let p = x[0].len();
    (0..p)
        .map(|j| {
            (x.iter().zip(y).map(|(r, yi)| r[j] / scales[j] * yi).sum::<f64>() / n).abs()
        })
        .fold(0.0, f64::max)
}

/// Picks a penalty by K-fold cross-validation with the one-standard-error
/// rule: the largest penalty whose CV error is within one standard error of
/// the minimum.
pub fn cv_penalty(x: &[Vec<f64>], y: &[f64], folds: usize, seed: u64) -> Result<f64> {
    let n = x.len();
    let k = folds.clamp(2, n);
    let plan = crate::nuisance::make_folds(n, k, seed)?;
    let pmax = penalty_max(x, y).max(1e-8);
    let path: Vec<f64> =
        (0..30).map(|i| pmax * (1e-3_f64).powf(i as f64 / 29.0)).collect();
    let mut cv_mean = vec![0.0; path.len()];
    let mut cv_se = vec![0.0; path.len()];
    for (pi, pen) in path.iter().enumerate() {
        let mut fold_mses = Vec::with_capacity(k);
        for fold in 0..plan.k {
            let (train, test): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| plan.assignment[i] != fold);
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let fit = lasso_fit(&xt, &yt, *pen)?;
            let mse = test
                .iter()
                .map(|&i| {
                    let e = y[i] - dot(&x[i], &fit.coefficients);
                    e * e
                })
                .sum::<f64>()
                / test.len() as f64;
            fold_mses.push(mse);
        }
        let mean = fold_mses.iter().sum::<f64>() / k as f64;
        let var =
            fold_mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (k as f64 - 1.0);
        cv_mean[pi] = mean;
        cv_se[pi] = (var / k as f64).sqrt();
    }
    let best = (0..path.len())
        .min_by(|&a, &b| cv_mean[a].partial_cmp(&cv_mean[b]).unwrap())
        .unwrap();
    let threshold = cv_mean[best] + cv_se[best];
    // Path is decreasing; the first penalty within the threshold is largest.
    for (pi, pen) in path.iter().enumerate() {
        if cv_mean[pi] <= threshold {
            return Ok(*pen);
        }
    }
    Ok(path[best])
}
