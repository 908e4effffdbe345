//! L1-penalised least squares by cyclic coordinate descent.

use nalgebra::DMatrix;

use crate::stats::median;
use crate::{Error, Result};

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

/// `(1/2n)‖y − Xβ‖² + λ‖β‖₁`
pub fn lasso_objective(x: &DMatrix<f64>, y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let mut rss = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let fit: f64 = beta.iter().enumerate().map(|(j, b)| x[(i, j)] * b).sum();
        rss += (yi - fit).powi(2);
    }
    rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Smallest penalty at which the all-zero vector is optimal: `max_j |X_j'y| / n`.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    x.column_iter()
        .map(|c| c.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Lasso on `x` and `y` as given (no intercept, no scaling).
pub fn lasso_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x.iter().chain(y).any(|v| !v.is_finite()) || !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid("lasso inputs must be finite with lambda >= 0"));
    }
    if x.nrows() != y.len() {
        return Err(Error::invalid("lasso: X and y have different row counts"));
    }
    Ok(lasso_warm(x, y, lambda, vec![0.0; x.ncols()]))
}

/// Coordinate descent from a starting vector; inputs assumed valid.
pub(crate) fn lasso_warm(x: &DMatrix<f64>, y: &[f64], lambda: f64, mut beta: Vec<f64>) -> Vec<f64> {
    let n = y.len() as f64;
    let p = x.ncols();
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm_squared() / n).collect();
    let mut resid: Vec<f64> = y.to_vec();
    for (j, b) in beta.iter().enumerate() {
        if *b != 0.0 {
            for (r, xv) in resid.iter_mut().zip(x.column(j).iter()) {
                *r -= xv * b;
            }
        }
    }
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if norms[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let col = x.column(j);
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n + norms[j] * beta[j];
            let new = soft(rho, lambda) / norms[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, xv) in resid.iter_mut().zip(col.iter()) {
                    *r -= xv * delta;
                }
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < LASSO_TOL {
            break;
        }
    }
    beta
}

/// Column statistics for median imputation and z-scoring, estimated on a
/// training slice only.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub y_mean: f64,
}

impl Standardizer {
    /// `columns[j][i]` is feature `j` of row `i`; `rows` selects the training rows.
    pub fn fit(columns: &[Vec<f64>], y: &[f64], rows: &[usize]) -> Self {
        let mut medians = Vec::with_capacity(columns.len());
        let mut means = Vec::with_capacity(columns.len());
        let mut sds = Vec::with_capacity(columns.len());
        for col in columns {
            let finite: Vec<f64> = rows.iter().map(|&i| col[i]).filter(|v| v.is_finite()).collect();
            let med = if finite.is_empty() { 0.0 } else { median(&finite) };
            let vals: Vec<f64> = rows.iter().map(|&i| if col[i].is_finite() { col[i] } else { med }).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            medians.push(med);
            means.push(m);
            sds.push(v.sqrt());
        }
        let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
        Self { medians, means, sds, y_mean }
    }

    /// Standardised design for `rows`; zero-variance columns become all zero.
    pub fn design(&self, columns: &[Vec<f64>], rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), columns.len(), |r, j| {
            let v = columns[j][rows[r]];
            let v = if v.is_finite() { v } else { self.medians[j] };
            if self.sds[j] > 0.0 {
                (v - self.means[j]) / self.sds[j]
            } else {
                0.0
            }
        })
    }

    pub fn centered_y(&self, y: &[f64], rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| y[i] - self.y_mean).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ols;

    fn fixture() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(30, 3, |i, j| (((i * 7 + j * 13) % 17) as f64 - 8.0) / 5.0 + if j == 1 { 0.1 * i as f64 / 30.0 } else { 0.0 });
        let y: Vec<f64> = (0..30).map(|i| 0.8 * x[(i, 0)] - 0.5 * x[(i, 2)] + (((i * 31) % 11) as f64 - 5.0) / 20.0).collect();
        (x, y)
    }

    #[test]
    fn zero_above_lambda_max() {
        let (x, y) = fixture();
        let b = lasso_fit(&x, &y, lambda_max(&x, &y)).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unpenalised_limit_is_ols() {
        let (x, y) = fixture();
        let b = lasso_fit(&x, &y, 0.0).unwrap();
        let o = ols(&x, &nalgebra::DVector::from_vec(y.clone())).unwrap();
        for (a, c) in b.iter().zip(o.iter()) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let (mut x, y) = fixture();
        x[(0, 0)] = f64::NAN;
        assert!(lasso_fit(&x, &y, 0.1).is_err());
    }
}
