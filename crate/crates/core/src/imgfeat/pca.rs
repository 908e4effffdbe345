//! Principal-component reduction of external embedding vectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `d_in x d_out`, orthonormal columns.
    pub components: DMatrix<f64>,
    pub column_means: DVector<f64>,
    /// Sample variance (n - 1 denominator) along each component, descending.
    pub explained_variance: Vec<f64>,
}

/// Fits a centred PCA with `d_out` components.
///
/// Eigendecomposition of the covariance when `n > d`, of the Gram matrix
/// otherwise. Each component is signed so its largest-magnitude loading is
/// positive.
pub fn fit_pca(data: &DMatrix<f64>, d_out: usize) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n <= d_out {
        return Err(Error::invalid(format!("PCA needs more rows ({n}) than components ({d_out})")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("PCA input contains non-finite values"));
    }
    let means = DVector::from_iterator(d, data.column_iter().map(|c| c.mean()));
    let mut xc = data.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let denom = (n - 1) as f64;
    let (vals, vecs): (Vec<f64>, DMatrix<f64>) = if n > d {
        let cov = xc.transpose() * &xc / denom;
        let eig = SymmetricEigen::new(cov);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    } else {
        let gram = &xc * xc.transpose();
        let eig = SymmetricEigen::new(gram);
        let mut v = DMatrix::zeros(d, n);
        let mut vals = Vec::with_capacity(n);
        for i in 0..n {
            let lam = eig.eigenvalues[i];
            let col = xc.transpose() * eig.eigenvectors.column(i);
            let norm = col.norm();
            if norm > 0.0 {
                v.set_column(i, &(col / norm));
            }
            vals.push(lam / denom);
        }
        (vals, v)
    };
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let top = vals.iter().copied().fold(0.0f64, f64::max);
    let tol = top * (n.max(d) as f64) * f64::EPSILON;
    let rank = vals.iter().filter(|&&v| v > tol && top > 0.0).count();
    if d_out > rank {
        return Err(Error::Rank { requested: d_out, achievable: rank });
    }
    let mut comps = DMatrix::zeros(d, d_out);
    let mut explained = Vec::with_capacity(d_out);
    for (k, &i) in order.iter().take(d_out).enumerate() {
        let mut c = vecs.column(i).clone_owned();
        let mut big = 0;
        for r in 0..d {
            if c[r].abs() > c[big].abs() {
                big = r;
            }
        }
        if c[big] < 0.0 {
            c.neg_mut();
        }
        comps.set_column(k, &c);
        explained.push(vals[i].max(0.0));
    }
    Ok(PcaModel { components: comps, column_means: means, explained_variance: explained })
}

pub fn apply_pca(model: &PcaModel, row: &[f64]) -> Vec<f64> {
    let x = DVector::from_column_slice(row) - &model.column_means;
    (model.components.transpose() * x).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_variances() {
        // x takes ±a with sample variance 4, y ±b with sample variance 1
        let n = 8;
        let a = (4.0 * (n - 1) as f64 / n as f64).sqrt();
        let b = (1.0 * (n - 1) as f64 / n as f64).sqrt();
        let mut rows = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let t = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            rows.push([s * a, t * b]);
        }
        let m = DMatrix::from_fn(n, 2, |i, j| rows[i][j]);
        let p = fit_pca(&m, 2).unwrap();
        assert!((p.explained_variance[0] - 4.0).abs() < 1e-12);
        assert!((p.explained_variance[1] - 1.0).abs() < 1e-12);
        assert!((p.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(p.components[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn rank_error_reports_achievable() {
        let m = DMatrix::from_fn(10, 3, |i, j| (i as f64) * (j as f64 + 1.0));
        match fit_pca(&m, 2) {
            Err(Error::Rank { requested: 2, achievable: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        let m = DMatrix::from_fn(5, 8, |i, j| ((i * 13 + j * 7) % 11) as f64 + 0.1 * (i * j) as f64);
        let p = fit_pca(&m, 3).unwrap();
        let c = &p.components;
        let g = c.transpose() * c;
        assert!((g - DMatrix::identity(3, 3)).abs().max() < 1e-10);
        let mean_row: Vec<f64> = p.column_means.iter().copied().collect();
        assert!(apply_pca(&p, &mean_row).iter().all(|v| v.abs() < 1e-12));
    }
}
