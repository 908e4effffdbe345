//! Restricted likelihood for two crossed random intercepts.
//!
//! Parameterised by the relative standard deviations
//! `θ = (σ_nft/σ, σ_coll/σ)` with σ² profiled out. For a given θ the mixed
//! model equations
//!
//! ```text
//! [ Λ'Z'ZΛ + I   Λ'Z'X ] [u]   [Λ'Z'y]
//! [ X'ZΛ         X'X   ] [β] = [X'y  ]
//! ```
//!
//! are solved by eliminating the (diagonal) NFT block first, which leaves a
//! dense system over collection effects and fixed effects only.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{chol_logdet, cholesky};
use crate::Result;

/// Design of the static model.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// Fixed-effect names, intercept first.
    pub names: Vec<String>,
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub nft: Vec<usize>,
    pub coll: Vec<usize>,
    pub nft_levels: Vec<String>,
    pub coll_levels: Vec<String>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Sufficient statistics of a design, computed once per fit.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    n: usize,
    p: usize,
    q2: usize,
    nft_counts: Vec<f64>,
    coll_counts: Vec<f64>,
    /// Per NFT: (collection, count) pairs.
    nft_coll: Vec<Vec<(usize, f64)>>,
    z1x: DMatrix<f64>,
    z2x: DMatrix<f64>,
    xtx: DMatrix<f64>,
    z1y: Vec<f64>,
    z2y: Vec<f64>,
    xty: DVector<f64>,
}

impl CrossProducts {
    pub fn new(d: &Design) -> Self {
        let (n, p) = (d.n(), d.p());
        let q1 = d.nft_levels.len();
        let q2 = d.coll_levels.len();
        let mut nft_counts = vec![0.0; q1];
        let mut coll_counts = vec![0.0; q2];
        let mut nft_coll: Vec<Vec<(usize, f64)>> = vec![Vec::new(); q1];
        let mut z1x = DMatrix::zeros(q1, p);
        let mut z2x = DMatrix::zeros(q2, p);
        let mut z1y = vec![0.0; q1];
        let mut z2y = vec![0.0; q2];
        for i in 0..n {
            let (j, c) = (d.nft[i], d.coll[i]);
            nft_counts[j] += 1.0;
            coll_counts[c] += 1.0;
            match nft_coll[j].iter_mut().find(|e| e.0 == c) {
                Some(e) => e.1 += 1.0,
                None => nft_coll[j].push((c, 1.0)),
            }
            for k in 0..p {
                z1x[(j, k)] += d.x[(i, k)];
                z2x[(c, k)] += d.x[(i, k)];
            }
            z1y[j] += d.y[i];
            z2y[c] += d.y[i];
        }
        for v in &mut nft_coll {
            v.sort_by_key(|e| e.0);
        }
        let xtx = d.x.transpose() * &d.x;
        let xty = d.x.transpose() * DVector::from_column_slice(&d.y);
        Self { n, p, q2, nft_counts, coll_counts, nft_coll, z1x, z2x, xtx, z1y, z2y, xty }
    }
}

/// Solution of the mixed model equations at one θ.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub theta: [f64; 2],
    /// `log det` of the full mixed-model coefficient matrix.
    pub logdet: f64,
    /// Penalised residual sum of squares.
    pub pwrss: f64,
    pub beta: DVector<f64>,
    /// Spherical random effects (scaled by θ and σ they give the BLUPs).
    pub u_nft: Vec<f64>,
    pub u_coll: Vec<f64>,
    /// `[S⁻¹]_ββ`, so that `Cov(β̂) = σ² · beta_precision_inv`.
    pub beta_cov_unscaled: DMatrix<f64>,
}

impl Evaluation {
    /// REML estimate of σ² at this θ.
    pub fn sigma2(&self, n: usize, p: usize) -> f64 {
        self.pwrss / (n - p) as f64
    }

    /// Profiled REML deviance, `-2 ℓ_R` with σ² at its conditional optimum.
    pub fn deviance(&self, n: usize, p: usize) -> f64 {
        let dof = (n - p) as f64;
        self.logdet + dof * (1.0 + (2.0 * std::f64::consts::PI * self.pwrss / dof).ln())
    }

    /// REML log-likelihood at an explicit residual variance.
    pub fn loglik_at(&self, n: usize, p: usize, sigma2: f64) -> f64 {
        let dof = (n - p) as f64;
        -0.5 * (self.logdet + dof * (2.0 * std::f64::consts::PI * sigma2).ln() + self.pwrss / sigma2)
    }
}

pub fn evaluate(d: &Design, cp: &CrossProducts, theta: [f64; 2]) -> Result<Evaluation> {
    let [t1, t2] = [theta[0].abs(), theta[1].abs()];
    let (p, q2) = (cp.p, cp.q2);
    let m = q2 + p;
    let mut s = DMatrix::zeros(m, m);
    for c in 0..q2 {
        s[(c, c)] = t2 * t2 * cp.coll_counts[c] + 1.0;
        for k in 0..p {
            let v = t2 * cp.z2x[(c, k)];
            s[(c, q2 + k)] = v;
            s[(q2 + k, c)] = v;
        }
    }
    for a in 0..p {
        for b in 0..p {
            s[(q2 + a, q2 + b)] = cp.xtx[(a, b)];
        }
    }
    let mut rhs = DVector::zeros(m);
    for c in 0..q2 {
        rhs[c] = t2 * cp.z2y[c];
    }
    for k in 0..p {
        rhs[q2 + k] = cp.xty[k];
    }
    let q1 = cp.nft_counts.len();
    let mut logdet = 0.0;
    let mut diag_a = vec![1.0; q1];
    // sparse row r_j over the reduced unknowns
    let mut idx: Vec<usize> = Vec::new();
    let mut val: Vec<f64> = Vec::new();
    if t1 > 0.0 {
        for j in 0..q1 {
            let a = t1 * t1 * cp.nft_counts[j] + 1.0;
            diag_a[j] = a;
            logdet += a.ln();
            idx.clear();
            val.clear();
            for &(c, cnt) in &cp.nft_coll[j] {
                idx.push(c);
                val.push(t1 * t2 * cnt);
            }
            for k in 0..p {
                idx.push(q2 + k);
                val.push(t1 * cp.z1x[(j, k)]);
            }
            let rj = t1 * cp.z1y[j];
            for (ai, &ia) in idx.iter().enumerate() {
                let va = val[ai] / a;
                rhs[ia] -= va * rj;
                for (bi, &ib) in idx.iter().enumerate() {
                    s[(ia, ib)] -= va * val[bi];
                }
            }
        }
    }
    let chol = cholesky(s, "mixed-model Schur complement")?;
    logdet += chol_logdet(&chol);
    let sol = chol.solve(&rhs);
    let u_coll: Vec<f64> = (0..q2).map(|c| sol[c]).collect();
    let beta = DVector::from_iterator(p, (0..p).map(|k| sol[q2 + k]));
    let mut u_nft = vec![0.0; q1];
    if t1 > 0.0 {
        for j in 0..q1 {
            let mut acc = t1 * cp.z1y[j];
            for &(c, cnt) in &cp.nft_coll[j] {
                acc -= t1 * t2 * cnt * sol[c];
            }
            for k in 0..p {
                acc -= t1 * cp.z1x[(j, k)] * beta[k];
            }
            u_nft[j] = acc / diag_a[j];
        }
    }
    let mut pwrss = u_nft.iter().map(|u| u * u).sum::<f64>() + u_coll.iter().map(|u| u * u).sum::<f64>();
    for i in 0..cp.n {
        let mut fit = t1 * u_nft[d.nft[i]] + t2 * u_coll[d.coll[i]];
        for k in 0..p {
            fit += d.x[(i, k)] * beta[k];
        }
        pwrss += (d.y[i] - fit).powi(2);
    }
    let mut e = DMatrix::zeros(m, p);
    for k in 0..p {
        e[(q2 + k, k)] = 1.0;
    }
    let sinv = chol.solve(&e);
    let beta_cov_unscaled = sinv.rows(q2, p).into_owned();
    Ok(Evaluation { theta: [t1, t2], logdet, pwrss, beta, u_nft, u_coll, beta_cov_unscaled })
}

/// REML log-likelihood at explicit variance components.
pub fn reml_loglik(d: &Design, sigma2_nft: f64, sigma2_coll: f64, sigma2: f64) -> Result<f64> {
    let cp = CrossProducts::new(d);
    let theta = [(sigma2_nft / sigma2).sqrt(), (sigma2_coll / sigma2).sqrt()];
    let e = evaluate(d, &cp, theta)?;
    Ok(e.loglik_at(d.n(), d.p(), sigma2))
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// 2 collections x 3 NFTs x 2 observations, one slope.
    pub fn tiny() -> Design {
        let mut y = Vec::new();
        let mut rows = Vec::new();
        let mut nft = Vec::new();
        let mut coll = Vec::new();
        for c in 0..2 {
            for j in 0..3 {
                for r in 0..2 {
                    let x = (c * 6 + j * 2 + r) as f64 / 3.0 - 1.5;
                    let noise = [0.3, -0.2, 0.5, -0.4, 0.1, 0.0, -0.3, 0.25, 0.45, -0.1, 0.2, -0.35][c * 6 + j * 2 + r];
                    y.push(1.0 + 0.5 * x + 0.4 * c as f64 + 0.3 * j as f64 + noise);
                    rows.push([1.0, x]);
                    nft.push(c * 3 + j);
                    coll.push(c);
                }
            }
        }
        Design {
            names: vec!["Intercept".into(), "x".into()],
            x: DMatrix::from_fn(12, 2, |i, k| rows[i][k]),
            y,
            nft,
            coll,
            nft_levels: (0..6).map(|i| format!("n{i}")).collect(),
            coll_levels: vec!["a".into(), "b".into()],
        }
    }

}
