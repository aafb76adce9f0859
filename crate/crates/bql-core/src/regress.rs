//! Deterministic least-squares engine: ordinary, nested, and
//! residual-on-residual regressions.
//!
//! Singular designs are solved with the minimum-norm pseudoinverse
//! (singular values below `1e-10 * sigma_max` are treated as zero), so the
//! pipeline stays total on degenerate finite samples. No per-column
//! standardization happens here; callers own scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SV_CUTOFF_REL: f64 = 1e-10;

/// Result of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub residual_sum_squares: f64,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.coefficients, x)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(rows: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if rows.iter().flatten().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in regression input".into()));
    }
    Ok(())
}

/// Minimum-norm ordinary least squares of `y` on the rows of `x`.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows but response has {} entries",
            n,
            y.len()
        )));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(Error::Dimension("design rows must share a positive length".into()));
    }
    check_finite(x, y)?;

    let mat = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let rhs = DVector::from_column_slice(y);
    let svd = mat.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = SV_CUTOFF_REL * sigma_max;
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let coef = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::Numeric(format!("svd solve failed: {e}")))?;
    let resid = &rhs - &mat * &coef;
    Ok(LinearFit {
        coefficients: coef.iter().cloned().collect(),
        rank,
        residual_sum_squares: resid.norm_squared(),
    })
}

/// Residual-on-residual least squares: minimizes
/// `sum_i [rf_i - rg_i * (x_i' a + offset)]^2` over `a`.
///
/// Equivalent to OLS with design rows `rg_i * x_i` and responses
/// `rf_i - rg_i * offset`. When every `rg_i` is zero the fit has rank 0 and
/// all coefficients are zero (minimum norm).
pub fn residual_on_residual(
    rf: &[f64],
    rg: &[f64],
    x: &[Vec<f64>],
    offset: f64,
) -> Result<LinearFit> {
    if rf.len() != rg.len() || rf.len() != x.len() {
        return Err(Error::Dimension(format!(
            "residual-on-residual inputs disagree: {} vs {} vs {} rows",
            rf.len(),
            rg.len(),
            x.len()
        )));
    }
    let rows: Vec<Vec<f64>> = x
        .iter()
        .zip(rg)
        .map(|(xi, &g)| xi.iter().map(|v| v * g).collect())
        .collect();
    let resp: Vec<f64> = rf.iter().zip(rg).map(|(&f, &g)| f - g * offset).collect();
    ols(&rows, &resp)
}

/// Projects already-fitted values onto a (typically smaller) design `z`.
pub fn nested_projection(fitted_values: &[f64], z: &[Vec<f64>]) -> Result<LinearFit> {
    ols(z, fitted_values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identity_design_returns_response() {
        let fit = ols(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 4.0, epsilon = 1e-12);
        assert_eq!(fit.rank, 2);
    }

    #[test]
    fn duplicated_column_gets_min_norm_split() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 3.0 * i as f64).collect();
        let fit = ols(&x, &y).unwrap();
        assert_eq!(fit.rank, 1);
        assert_abs_diff_eq!(fit.coefficients[0], fit.coefficients[1], epsilon = 1e-10);
        assert_abs_diff_eq!(fit.coefficients[0], 1.5, epsilon = 1e-10);
    }

    #[test]
    fn noiseless_data_recovers_coefficients() {
        let mut rng = crate::seed::rng_for(42, &[]);
        let b = [1.0, -2.0, 0.5];
        let x: Vec<Vec<f64>> =
            (0..50).map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| dot(r, &b)).collect();
        let fit = ols(&x, &y).unwrap();
        for (c, t) in fit.coefficients.iter().zip(b.iter()) {
            assert_abs_diff_eq!(c, t, epsilon = 1e-8);
        }
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let r = ols(&[vec![f64::NAN]], &[1.0]);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn normal_equations_hold_on_full_rank_fits() {
        let mut rng = crate::seed::rng_for(7, &[]);
        for _ in 0..20 {
            let x: Vec<Vec<f64>> = (0..30)
                .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let y: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let fit = ols(&x, &y).unwrap();
            let mut xty_inf: f64 = 0.0;
            let mut grad_inf: f64 = 0.0;
            for j in 0..4 {
                let xty: f64 = x.iter().zip(&y).map(|(r, yi)| r[j] * yi).sum();
                let xtxb: f64 = x.iter().map(|r| r[j] * dot(r, &fit.coefficients)).sum();
                xty_inf = xty_inf.max(xty.abs());
                grad_inf = grad_inf.max((xty - xtxb).abs());
            }
            assert!(grad_inf <= 1e-6 * (1.0 + xty_inf));
        }
    }

    #[test]
    fn unit_rg_reduces_to_ols() {
        let mut rng = crate::seed::rng_for(11, &[]);
        let x: Vec<Vec<f64>> =
            (0..40).map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let ones = vec![1.0; 40];
        let a = residual_on_residual(&y, &ones, &x, 0.0).unwrap();
        let b = ols(&x, &y).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_offset_matches_offset_free_fit() {
        let rf = [1.0, 2.0, -0.5];
        let rg = [0.5, -1.0, 2.0];
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let a = residual_on_residual(&rf, &rg, &x, 0.0).unwrap();
        let rows: Vec<Vec<f64>> =
            x.iter().zip(&rg).map(|(r, g)| r.iter().map(|v| v * g).collect()).collect();
        let b = ols(&rows, &rf).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn noiseless_offset_model_recovers_contrast() {
        let mut rng = crate::seed::rng_for(3, &[]);
        let target = [0.7, -1.1];
        let offset = 0.3;
        let mut x = Vec::new();
        let mut rf = Vec::new();
        let mut rg = Vec::new();
        for _ in 0..60 {
            let xi: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let g: f64 = rng.sample::<f64, _>(StandardNormal);
            rf.push(g * (dot(&xi, &target) + offset));
            rg.push(g);
            x.push(xi);
        }
        let fit = residual_on_residual(&rf, &rg, &x, offset).unwrap();
        for (c, t) in fit.coefficients.iter().zip(target.iter()) {
            assert_abs_diff_eq!(c, t, epsilon = 1e-8);
        }
    }

    #[test]
    fn all_zero_rg_gives_rank_zero_zero_coefficients() {
        let fit =
            residual_on_residual(&[1.0, 2.0], &[0.0, 0.0], &[vec![1.0], vec![2.0]], 0.0).unwrap();
        assert_eq!(fit.rank, 0);
        assert_eq!(fit.coefficients, vec![0.0]);
    }

    #[test]
    fn projection_onto_own_design_is_idempotent() {
        let mut rng = crate::seed::rng_for(19, &[]);
        let x: Vec<Vec<f64>> =
            (0..25).map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..25).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let base = ols(&x, &y).unwrap();
        let fitted: Vec<f64> = x.iter().map(|r| dot(r, &base.coefficients)).collect();
        let again = nested_projection(&fitted, &x).unwrap();
        for (u, v) in again.coefficients.iter().zip(&base.coefficients) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-8);
        }
    }

    #[test]
    fn orthogonal_target_projects_to_zero() {
        // Column space of z is span{(1,1)}: (1,-1) responses are orthogonal.
        let z = vec![vec![1.0], vec![1.0]];
        let fitted = [1.0, -1.0];
        let fit = nested_projection(&fitted, &z).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_matches_sample_covariance_oracle() {
        // Project (s, a)' theta onto the first coordinate subvector and
        // compare against the closed-form population projection computed
        // from brute-force sample moments at n = 1e5.
        let n = 100_000;
        let theta = [1.0, -0.5, 0.25];
        let mut rng = crate::seed::rng_for(23, &[]);
        let mut z = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n);
        let mut m00 = 0.0;
        let mut m0t = 0.0;
        for _ in 0..n {
            let s: Vec<f64> = (0..2).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let a = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
            let t = theta[0] * s[0] + theta[1] * s[1] + theta[2] * a;
            m00 += s[0] * s[0];
            m0t += s[0] * t;
            z.push(vec![s[0]]);
            target.push(t);
        }
        let oracle = m0t / m00;
        let fit = nested_projection(&target, &z).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], oracle, epsilon = 1e-9);
    }

    #[test]
    fn fits_are_bit_identical_across_calls() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.5]];
        let y = [1.0, 0.0, 2.0];
        let a = ols(&x, &y).unwrap();
        let b = ols(&x, &y).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.residual_sum_squares.to_bits(), b.residual_sum_squares.to_bits());
    }
}
