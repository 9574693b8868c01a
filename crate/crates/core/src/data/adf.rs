//! Augmented Dickey-Fuller regression statistic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_ADF_LAGS: usize = 1;

/// Design matrix and response of the ADF regression
/// `Δx_t = α + γ x_{t-1} + Σ_{i=1..p} δ_i Δx_{t-i} + e_t`.
///
/// Columns are `[1, x_{t-1}, Δx_{t-1}, …, Δx_{t-p}]`; one row per
/// `t = p+1 .. n-1`.
pub fn adf_design(series: &[f64], lags: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let regressors = 2 + lags;
    let n = series.len();
    if n <= lags + 2 + regressors {
        return Err(Error::InvalidArgument(format!(
            "ADF with {lags} lags needs more than {} points, got {n}",
            lags + 2 + regressors
        )));
    }
    let diff: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // diff[t-1] = x_t - x_{t-1}
    let mut rows = Vec::with_capacity(n - 1 - lags);
    let mut y = Vec::with_capacity(n - 1 - lags);
    for t in (lags + 1)..n {
        let mut row = Vec::with_capacity(regressors);
        row.push(1.0);
        row.push(series[t - 1]);
        for i in 1..=lags {
            row.push(diff[t - 1 - i]);
        }
        rows.push(row);
        y.push(diff[t - 1]);
    }
    Ok((rows, y))
}

/// t-statistic `γ̂ / se(γ̂)` of the lagged level, fitted by Householder QR.
pub fn adf_statistic(series: &[f64], lags: usize) -> Result<f64> {
    let (rows, y) = adf_design(series, lags)?;
    let m = rows.len();
    let k = rows[0].len();
    let x = DMatrix::from_fn(m, k, |i, j| rows[i][j]);
    let y = DVector::from_vec(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("ADF regressors are collinear".into()));
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let resid = &y - &x * &beta;
    let dof = (m - k) as f64;
    let s2 = resid.dot(&resid) / dof;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Singular("triangular inverse failed".into()))?;
    // (XᵀX)⁻¹ = R⁻¹ R⁻ᵀ, so its (1,1) entry is the squared norm of row 1 of R⁻¹.
    let var_gamma = s2 * r_inv.row(1).iter().map(|v| v * v).sum::<f64>();
    Ok(beta[1] / var_gamma.sqrt())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    /// Independent route: normal equations solved by Gauss-Jordan elimination.
    pub(crate) fn normal_equations_oracle(series: &[f64], lags: usize) -> f64 {
        let (rows, y) = adf_design(series, lags).unwrap();
        let k = rows[0].len();
        let mut a = vec![vec![0.0; 2 * k]; k];
        let mut xty = vec![0.0; k];
        for (row, &yv) in rows.iter().zip(&y) {
            for i in 0..k {
                xty[i] += row[i] * yv;
                for j in 0..k {
                    a[i][j] += row[i] * row[j];
                }
            }
        }
        for (i, r) in a.iter_mut().enumerate() {
            r[k + i] = 1.0;
        }
        for col in 0..k {
            let piv = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for v in a[col].iter_mut() {
                *v /= d;
            }
            for r in 0..k {
                if r != col {
                    let f = a[r][col];
                    let pivot_row = a[col].clone();
                    for (v, p) in a[r].iter_mut().zip(pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
        let inv: Vec<Vec<f64>> = a.iter().map(|r| r[k..].to_vec()).collect();
        let beta: Vec<f64> = (0..k).map(|i| (0..k).map(|j| inv[i][j] * xty[j]).sum()).collect();
        let rss: f64 = rows
            .iter()
            .zip(&y)
            .map(|(r, yv)| {
                let fit: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
                (yv - fit).powi(2)
            })
            .sum();
        let s2 = rss / (rows.len() - k) as f64;
        beta[1] / (s2 * inv[1][1]).sqrt()
    }

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; n];
        for t in 1..n {
            let e: f64 = rng.sample(StandardNormal);
            x[t] = phi * x[t - 1] + e;
        }
        x
    }

    #[test]
    fn mean_reverting_series_is_strongly_negative() {
        let x = ar1(-0.9, 500, 1);
        let s = adf_statistic(&x, 1).unwrap();
        assert!(s < -5.0, "{s}");
        assert!((s - normal_equations_oracle(&x, 1)).abs() < 1e-8);
    }

    #[test]
    fn matches_oracle_on_fixed_series() {
        let x: Vec<f64> = (0..50)
            .map(|t| {
                let t = t as f64;
                (0.37 * t).sin() + 0.1 * (1.3 * t).cos() + 0.01 * t
            })
            .collect();
        for lags in 0..4 {
            let a = adf_statistic(&x, lags).unwrap();
            let b = normal_equations_oracle(&x, lags);
            assert!((a - b).abs() < 1e-8, "lags={lags}: {a} vs {b}");
        }
    }

    #[test]
    fn offset_invariance() {
        let x = ar1(0.5, 200, 4);
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.0).collect();
        let a = adf_statistic(&x, 2).unwrap();
        let b = adf_statistic(&shifted, 2).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(adf_statistic(&[1.0, 2.0, 3.0], 1).is_err());
        // a straight line has constant differences: collinear with the intercept
        let line: Vec<f64> = (0..30).map(|t| t as f64).collect();
        assert!(matches!(adf_statistic(&line, 1), Err(Error::Singular(_))));
    }
}
