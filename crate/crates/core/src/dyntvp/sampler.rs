//! Blocked Gibbs sampler for the dynamic model.
//!
//! Student-t noise is written as a scale mixture, `eps | lambda ~ N(0, sigma^2 / lambda)`
//! with `lambda ~ Gamma(nu/2, nu/2)`. Given `lambda` and the scale parameters,
//! every location parameter enters the mean linearly, so they are drawn in one
//! Gaussian block in a non-centred basis:
//!
//! - cycle effects and each collection's cycle profile through an orthonormal
//!   sum-to-zero (Helmert) basis, which makes the centring exact;
//! - each TVP path as its first value plus standardised random-walk increments,
//!   with the pooled mean integrated out of the first value's prior;
//! - collection intercepts as standardised draws times `sigma_coll`.
//!
//! Every scale then gets an interweaved update (ASIS): a truncated-normal
//! draw in the non-centred form followed by a slice draw in the centred form.
//! `sigma` and `nu` are slice-sampled with `lambda` integrated out, `nu` on
//! `log(nu - 2)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{log_posterior, student_t_lpdf, DynamicData, DynamicPosterior, DynamicSpec, Labels, Layout, Params};
use crate::exec::{derive_seed, map_indexed, Exec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Burn-in iterations per chain, discarded.
    pub n_tune: usize,
    pub n_draws: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// `false` samples the prior.
    pub likelihood: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n_tune: 200, n_draws: 200, n_chains: 2, seed: 0, likelihood: true }
    }
}

/// Column offsets of the joint Gaussian block.
#[derive(Debug, Clone, Copy)]
struct Lin {
    p: usize,
    k: usize,
    t: usize,
    c: usize,
    cc: bool,
}

impl Lin {
    fn tm1(&self) -> usize {
        self.t.saturating_sub(1)
    }
    fn gamma(&self, j: usize) -> usize {
        1 + j
    }
    fn beta1(&self, k: usize) -> usize {
        1 + self.p + k
    }
    fn xi(&self, k: usize, j: usize) -> usize {
        1 + self.p + self.k + k * self.tm1() + j
    }
    /// First column of the group-level part; everything before is row-level.
    fn a(&self, j: usize) -> usize {
        1 + self.p + self.k + self.k * self.tm1() + j
    }
    fn u(&self, c: usize) -> usize {
        self.a(0) + self.tm1() + c
    }
    fn bcc(&self, c: usize, j: usize) -> usize {
        self.u(0) + self.c + c * self.tm1() + j
    }
    fn dim(&self) -> usize {
        self.u(0) + self.c + if self.cc { self.c * self.tm1() } else { 0 }
    }
}

/// Orthonormal basis of the sum-to-zero subspace, row-major `T x (T-1)`.
pub(crate) fn helmert(t: usize) -> Vec<f64> {
    let m = t.saturating_sub(1);
    let mut h = vec![0.0; t * m];
    for j in 0..m {
        let jj = (j + 1) as f64;
        let norm = (jj * (jj + 1.0)).sqrt();
        for row in 0..=j {
            h[row * m + j] = 1.0 / norm;
        }
        h[(j + 1) * m + j] = -jj / norm;
    }
    h
}

struct Ctx<'a> {
    data: &'a DynamicData,
    spec: &'a DynamicSpec,
    lin: Lin,
    layout: Layout,
    h: Vec<f64>,
    nft_rows: Vec<Vec<usize>>,
    likelihood: bool,
}

struct State {
    theta: Vec<f64>,
    sigma_cycle: f64,
    sigma_coll: f64,
    sigma_cc: f64,
    sigma_betabar: Vec<f64>,
    omega: Vec<f64>,
    betabar: Vec<f64>,
    sigma: f64,
    nu: f64,
    lambda: Vec<f64>,
    u_nft: Vec<f64>,
    sigma_nft: f64,
}

impl<'a> Ctx<'a> {
    fn hrow(&self, tau: usize) -> &[f64] {
        let m = self.lin.tm1();
        &self.h[tau * m..(tau + 1) * m]
    }

    /// `H x` for a coordinate slice of length `T - 1`.
    fn hmul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.lin.t).map(|tau| self.hrow(tau).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// TVP paths, row-major `K x T`.
    fn paths(&self, s: &State) -> Vec<f64> {
        let l = self.lin;
        let mut b = vec![0.0; l.k * l.t];
        for k in 0..l.k {
            let mut cur = s.theta[l.beta1(k)];
            for tau in 0..l.t {
                if tau > 0 {
                    cur += s.omega[k] * s.theta[l.xi(k, tau - 1)];
                }
                b[k * l.t + tau] = cur;
            }
        }
        b
    }

    fn residuals(&self, s: &State) -> Vec<f64> {
        let (d, l) = (self.data, self.lin);
        let delta: Vec<f64> =
            self.hmul(&s.theta[l.a(0)..l.a(0) + l.tm1()]).iter().map(|v| v * s.sigma_cycle).collect();
        let w: Vec<Vec<f64>> = if l.cc {
            (0..l.c)
                .map(|c| {
                    let b = &s.theta[l.bcc(c, 0)..l.bcc(c, 0) + l.tm1()];
                    self.hmul(b).iter().map(|v| v * s.sigma_cc).collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        let paths = self.paths(s);
        (0..d.n())
            .map(|i| {
                let (tau, c) = (d.cycle[i], d.coll[i]);
                let mut m = s.theta[0] + delta[tau] + s.sigma_coll * s.theta[l.u(c)];
                for j in 0..l.p {
                    m += d.x[i * l.p + j] * s.theta[l.gamma(j)];
                }
                for k in 0..l.k {
                    m += d.z[i * l.k + k] * paths[k * l.t + tau];
                }
                if l.cc {
                    m += w[c][tau];
                }
                if self.spec.include_nft_re {
                    m += s.sigma_nft * s.u_nft[d.nft[i]];
                }
                d.y[i] - m
            })
            .collect()
    }

    /// Draws the joint Gaussian block given `lambda` and all scales.
    fn draw_linear(&self, s: &mut State, rng: &mut ChaCha8Rng) -> Result<()> {
        let (d, l) = (self.data, self.lin);
        let pr = &self.spec.priors;
        let dim = l.dim();
        let dense = l.a(0);
        let mut q = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);

        if self.likelihood {
            let inv_s2 = 1.0 / (s.sigma * s.sigma);
            let groups = l.c * l.t;
            let mut g_lam = vec![0.0; groups];
            let mut g_ly = vec![0.0; groups];
            let mut g_s = vec![0.0; groups * dense];
            let mut cols: Vec<usize> = Vec::with_capacity(dense);
            let mut vals: Vec<f64> = Vec::with_capacity(dense);
            for i in 0..d.n() {
                let (tau, c) = (d.cycle[i], d.coll[i]);
                let wt = s.lambda[i] * inv_s2;
                let yi = if self.spec.include_nft_re { d.y[i] - s.sigma_nft * s.u_nft[d.nft[i]] } else { d.y[i] };
                cols.clear();
                vals.clear();
                cols.push(0);
                vals.push(1.0);
                for j in 0..l.p {
                    cols.push(l.gamma(j));
                    vals.push(d.x[i * l.p + j]);
                }
                for k in 0..l.k {
                    let zk = d.z[i * l.k + k];
                    cols.push(l.beta1(k));
                    vals.push(zk);
                    for j in 0..tau {
                        cols.push(l.xi(k, j));
                        vals.push(s.omega[k] * zk);
                    }
                }
                let g = c * l.t + tau;
                g_lam[g] += wt;
                g_ly[g] += wt * yi;
                let gs = &mut g_s[g * dense..(g + 1) * dense];
                for (a, (&ca, &va)) in cols.iter().zip(&vals).enumerate() {
                    let wa = wt * va;
                    b[ca] += wa * yi;
                    gs[ca] += wa;
                    for (&cb, &vb) in cols[..=a].iter().zip(&vals[..=a]) {
                        // columns are not sorted when K > 1; keep to the lower triangle
                        q[(ca.max(cb), ca.min(cb))] += wa * vb;
                    }
                }
            }
            // group-level columns: cycle basis, collection intercept, collection x cycle basis
            let mut hcols: Vec<usize> = Vec::new();
            let mut hvals: Vec<f64> = Vec::new();
            for c in 0..l.c {
                for tau in 0..l.t {
                    let g = c * l.t + tau;
                    if g_lam[g] == 0.0 {
                        continue;
                    }
                    hcols.clear();
                    hvals.clear();
                    for (j, hv) in self.hrow(tau).iter().enumerate() {
                        hcols.push(l.a(j));
                        hvals.push(s.sigma_cycle * hv);
                    }
                    hcols.push(l.u(c));
                    hvals.push(s.sigma_coll);
                    if l.cc {
                        for (j, hv) in self.hrow(tau).iter().enumerate() {
                            hcols.push(l.bcc(c, j));
                            hvals.push(s.sigma_cc * hv);
                        }
                    }
                    let gs = &g_s[g * dense..(g + 1) * dense];
                    for (&ca, &va) in hcols.iter().zip(&hvals) {
                        b[ca] += va * g_ly[g];
                        for (cb, &sv) in gs.iter().enumerate() {
                            if sv != 0.0 {
                                q[(ca, cb)] += va * sv;
                            }
                        }
                        for (&cb, &vb) in hcols.iter().zip(&hvals) {
                            if cb <= ca {
                                q[(ca, cb)] += g_lam[g] * va * vb;
                            }
                        }
                    }
                }
            }
        }

        q[(0, 0)] += 1.0 / (pr.alpha_sd * pr.alpha_sd);
        for j in 0..l.p {
            q[(l.gamma(j), l.gamma(j))] += 1.0 / (pr.gamma_sd * pr.gamma_sd);
        }
        for k in 0..l.k {
            // pooled mean integrated out: beta_1 ~ N(0, betabar_sd^2 + sigma_betabar^2)
            let v0 = pr.betabar_sd * pr.betabar_sd + s.sigma_betabar[k] * s.sigma_betabar[k];
            q[(l.beta1(k), l.beta1(k))] += 1.0 / v0;
        }
        for j in l.beta1(l.k)..dim {
            q[(j, j)] += 1.0;
        }
        // mirror the lower triangle
        for a in 0..dim {
            for c in 0..a {
                q[(c, a)] = q[(a, c)];
            }
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| Error::Numerical("posterior precision of the location block is not positive definite".into()))?;
        let mean = chol.solve(&b);
        let eps = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dev = chol
            .l_dirty()
            .tr_solve_lower_triangular(&eps)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        for j in 0..dim {
            s.theta[j] = mean[j] + dev[j];
        }
        Ok(())
    }
}

/// Draw from `N(m, s^2)` truncated to `(0, inf)`.
fn truncnorm_pos(m: f64, s: f64, rng: &mut ChaCha8Rng) -> f64 {
    let a = -m / s;
    let z = if a <= 0.5 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a {
                break z;
            }
        }
    } else {
        // exponential proposal with the optimal rate
        let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let z = a - rng.random::<f64>().max(f64::MIN_POSITIVE).ln() / alpha;
            let rho = (-0.5 * (z - alpha) * (z - alpha)).exp();
            if rng.random::<f64>() <= rho {
                break z;
            }
        }
    };
    (m + s * z).max(f64::MIN_POSITIVE)
}

/// Univariate slice sampler with stepping out and shrinkage.
fn slice<F: FnMut(f64) -> f64>(x0: f64, width: f64, mut logf: F, rng: &mut ChaCha8Rng) -> f64 {
    let f0 = logf(x0);
    if !f0.is_finite() {
        return x0;
    }
    let e: f64 = rand_distr::Exp1.sample(rng);
    let level = f0 - e;
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    let mut budget = 64;
    while budget > 0 && logf(lo) > level {
        lo -= width;
        budget -= 1;
    }
    budget = 64;
    while budget > 0 && logf(hi) > level {
        hi += width;
        budget -= 1;
    }
    loop {
        let x1 = lo + (hi - lo) * rng.random::<f64>();
        if logf(x1) > level {
            return x1;
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
        if hi - lo < 1e-12 {
            return x0;
        }
    }
}

/// Centred-form draw of a half-normal scale given `m` coordinates with sum of
/// squares `ss` that are `N(0, s^2)` under it.
fn centred_scale(s0: f64, prior_scale: f64, m: usize, ss: f64, rng: &mut ChaCha8Rng) -> f64 {
    let inv2 = 0.5 / (prior_scale * prior_scale);
    let mf = m as f64;
    let t = slice(s0.ln(), 1.0, |t| -(2.0 * t).exp() * inv2 - mf * t - 0.5 * ss * (-2.0 * t).exp() + t, rng);
    t.exp()
}

/// One interweaved update of a scale `s` whose contribution to the mean is
/// `s * g_i`, with standardised coordinates `coords`. Updates `resid` and
/// rescales `coords`; returns the new scale.
#[allow(clippy::too_many_arguments)]
fn asis(
    s_old: f64,
    prior_scale: f64,
    g: &[f64],
    coords: &mut [f64],
    resid: &mut [f64],
    weights: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut prec = 1.0 / (prior_scale * prior_scale);
    let mut lin = 0.0;
    if let Some(w) = weights {
        for i in 0..g.len() {
            let r_ex = resid[i] + s_old * g[i];
            prec += w[i] * g[i] * g[i];
            lin += w[i] * g[i] * r_ex;
        }
    }
    let s1 = truncnorm_pos(lin / prec, prec.sqrt().recip(), rng);
    for i in 0..g.len() {
        resid[i] += (s_old - s1) * g[i];
    }
    let ss = s1 * s1 * coords.iter().map(|c| c * c).sum::<f64>();
    let s2 = centred_scale(s1, prior_scale, coords.len(), ss, rng);
    let f = s1 / s2;
    for c in coords.iter_mut() {
        *c *= f;
    }
    s2
}

fn t_loglik(resid: &[f64], nu: f64, sigma: f64) -> f64 {
    resid.iter().map(|r| student_t_lpdf(*r, nu, sigma)).sum()
}

fn gamma_draw(shape: f64, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    Gamma::new(shape, scale).map(|g| g.sample(rng)).unwrap_or(f64::NAN)
}

fn run_chain(ctx: &Ctx, cfg: &SampleConfig, seed: u64) -> Result<Vec<f64>> {
    let (d, l) = (ctx.data, ctx.lin);
    let pr = &ctx.spec.priors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = |rng: &mut ChaCha8Rng| 0.5 + rng.random::<f64>();
    let n = d.n();
    let y_sd = crate::stats::pop_sd(&d.y);
    let mut s = State {
        theta: vec![0.0; l.dim()],
        sigma_cycle: pr.sigma_cycle_scale * jitter(&mut rng),
        sigma_coll: pr.sigma_coll_scale * jitter(&mut rng),
        sigma_cc: pr.sigma_cc_scale * jitter(&mut rng),
        sigma_betabar: (0..l.k).map(|_| pr.sigma_betabar_scale * jitter(&mut rng)).collect(),
        omega: (0..l.k).map(|_| pr.omega_scale * jitter(&mut rng)).collect(),
        betabar: vec![0.0; l.k],
        sigma: if ctx.likelihood && y_sd > 0.0 { y_sd } else { pr.sigma_resid_scale } * jitter(&mut rng),
        nu: 2.0 + 2.0 + 18.0 * rng.random::<f64>(),
        lambda: vec![1.0; n],
        u_nft: vec![0.0; ctx.layout.n_nft],
        sigma_nft: pr.sigma_nft_scale * jitter(&mut rng),
    };
    if ctx.likelihood {
        s.theta[0] = crate::stats::mean(&d.y);
    }
    let mut out = Vec::with_capacity(cfg.n_draws * ctx.layout.len());
    let mut weights = vec![0.0; n];
    let mut g = vec![0.0; n];

    for iter in 0..cfg.n_tune + cfg.n_draws {
        // 1. mixing weights
        let resid = ctx.residuals(&s);
        for i in 0..n {
            s.lambda[i] = if ctx.likelihood {
                let r = resid[i] / s.sigma;
                gamma_draw(0.5 * (s.nu + 1.0), 2.0 / (s.nu + r * r), &mut rng)
            } else {
                gamma_draw(0.5 * s.nu, 2.0 / s.nu, &mut rng)
            };
        }
        // 2. location block
        ctx.draw_linear(&mut s, &mut rng)?;
        let mut resid = ctx.residuals(&s);
        let inv_s2 = 1.0 / (s.sigma * s.sigma);
        for i in 0..n {
            weights[i] = s.lambda[i] * inv_s2;
        }
        let wopt = if ctx.likelihood { Some(weights.as_slice()) } else { None };

        // 3. optional NFT intercepts, non-centred, then their scale
        if ctx.spec.include_nft_re {
            for (j, rows) in ctx.nft_rows.iter().enumerate() {
                let mut prec = 1.0;
                let mut lin = 0.0;
                if ctx.likelihood {
                    for &i in rows {
                        let r_ex = resid[i] + s.sigma_nft * s.u_nft[j];
                        prec += weights[i] * s.sigma_nft * s.sigma_nft;
                        lin += weights[i] * s.sigma_nft * r_ex;
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                let new = lin / prec + z / prec.sqrt();
                for &i in rows {
                    resid[i] += s.sigma_nft * (s.u_nft[j] - new);
                }
                s.u_nft[j] = new;
            }
            for i in 0..n {
                g[i] = s.u_nft[d.nft[i]];
            }
            s.sigma_nft = asis(s.sigma_nft, pr.sigma_nft_scale, &g, &mut s.u_nft, &mut resid, wopt, &mut rng);
        }

        // 4. scales of the group-level effects
        if l.t > 1 {
            let ha = ctx.hmul(&s.theta[l.a(0)..l.a(0) + l.tm1()]);
            for i in 0..n {
                g[i] = ha[d.cycle[i]];
            }
            let coords = &mut s.theta[l.a(0)..l.a(0) + l.tm1()];
            s.sigma_cycle = asis(s.sigma_cycle, pr.sigma_cycle_scale, &g, coords, &mut resid, wopt, &mut rng);
        } else {
            s.sigma_cycle = centred_scale(s.sigma_cycle, pr.sigma_cycle_scale, 0, 0.0, &mut rng);
        }

        for i in 0..n {
            g[i] = s.theta[l.u(d.coll[i])];
        }
        let coords = &mut s.theta[l.u(0)..l.u(0) + l.c];
        s.sigma_coll = asis(s.sigma_coll, pr.sigma_coll_scale, &g, coords, &mut resid, wopt, &mut rng);

        if l.cc && l.t > 1 {
            let hb: Vec<Vec<f64>> =
                (0..l.c).map(|c| ctx.hmul(&s.theta[l.bcc(c, 0)..l.bcc(c, 0) + l.tm1()])).collect();
            for i in 0..n {
                g[i] = hb[d.coll[i]][d.cycle[i]];
            }
            let coords = &mut s.theta[l.bcc(0, 0)..l.dim()];
            s.sigma_cc = asis(s.sigma_cc, pr.sigma_cc_scale, &g, coords, &mut resid, wopt, &mut rng);
        } else if l.cc {
            s.sigma_cc = centred_scale(s.sigma_cc, pr.sigma_cc_scale, 0, 0.0, &mut rng);
        }

        // 5. random-walk volatility and pooled level of each TVP path
        for k in 0..l.k {
            if l.t > 1 {
                let mut cum = vec![0.0; l.t];
                for tau in 1..l.t {
                    cum[tau] = cum[tau - 1] + s.theta[l.xi(k, tau - 1)];
                }
                for i in 0..n {
                    g[i] = d.z[i * l.k + k] * cum[d.cycle[i]];
                }
                let coords = &mut s.theta[l.xi(k, 0)..l.xi(k, 0) + l.tm1()];
                s.omega[k] = asis(s.omega[k], pr.omega_scale, &g, coords, &mut resid, wopt, &mut rng);
            } else {
                s.omega[k] = centred_scale(s.omega[k], pr.omega_scale, 0, 0.0, &mut rng);
            }
            let b1 = s.theta[l.beta1(k)];
            let v0 = pr.betabar_sd * pr.betabar_sd;
            let inv2 = 0.5 / (pr.sigma_betabar_scale * pr.sigma_betabar_scale);
            let t = slice(
                s.sigma_betabar[k].ln(),
                1.0,
                |t| {
                    let s2 = (2.0 * t).exp();
                    -s2 * inv2 - 0.5 * (v0 + s2).ln() - 0.5 * b1 * b1 / (v0 + s2) + t
                },
                &mut rng,
            );
            let sb = t.exp();
            s.sigma_betabar[k] = sb;
            let prec = 1.0 / v0 + 1.0 / (sb * sb);
            let z: f64 = rng.sample(StandardNormal);
            s.betabar[k] = b1 / (sb * sb) / prec + z / prec.sqrt();
        }

        // 6. residual scale and tail weight with lambda integrated out
        let lik = ctx.likelihood;
        let inv2 = 0.5 / (pr.sigma_resid_scale * pr.sigma_resid_scale);
        let nu = s.nu;
        let t = slice(
            s.sigma.ln(),
            1.0,
            |t| {
                let sg = t.exp();
                let ll = if lik { t_loglik(&resid, nu, sg) } else { 0.0 };
                ll - sg * sg * inv2 + t
            },
            &mut rng,
        );
        s.sigma = t.exp();
        let sigma = s.sigma;
        let rate = pr.nu_rate;
        let t = slice(
            (s.nu - 2.0).ln(),
            1.0,
            |t| {
                let eta = t.exp();
                let ll = if lik { t_loglik(&resid, 2.0 + eta, sigma) } else { 0.0 };
                ll - rate * eta + t
            },
            &mut rng,
        );
        s.nu = 2.0 + t.exp();

        if iter >= cfg.n_tune {
            let params = ctx.to_params(&s, &mut rng);
            let lp = log_posterior(&params, d, ctx.spec);
            let flat = params.to_flat(&ctx.layout, lp);
            if let Some(j) = flat.iter().position(|v| v.is_nan()) {
                let names = Labels::of(d, &ctx.layout).scalar_names(&ctx.layout);
                return Err(Error::Numerical(format!("NaN in draw {} of {}", iter - cfg.n_tune, names[j])));
            }
            out.extend(flat);
        }
    }
    Ok(out)
}

impl<'a> Ctx<'a> {
    /// Maps the sampler state back to the model parameterisation. The mean
    /// components of `delta0` and each `v` row are unidentified by the data
    /// and are drawn from their prior.
    fn to_params(&self, s: &State, rng: &mut ChaCha8Rng) -> Params {
        let l = self.lin;
        let t = l.t as f64;
        let draw_mean = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal) / t.sqrt();
        let ha = self.hmul(&s.theta[l.a(0)..l.a(0) + l.tm1()]);
        let md = draw_mean(rng);
        let delta0 = ha.iter().map(|v| v + md).collect();
        let v = if l.cc {
            (0..l.c)
                .flat_map(|c| {
                    let hb = self.hmul(&s.theta[l.bcc(c, 0)..l.bcc(c, 0) + l.tm1()]);
                    let mc = draw_mean(rng);
                    hb.into_iter().map(move |x| x + mc)
                })
                .collect()
        } else {
            vec![0.0; l.c * l.t]
        };
        Params {
            alpha: s.theta[0],
            gamma: (0..l.p).map(|j| s.theta[l.gamma(j)]).collect(),
            betabar: s.betabar.clone(),
            sigma_betabar: s.sigma_betabar.clone(),
            omega: s.omega.clone(),
            b: self.paths(s),
            delta0,
            sigma_cycle: s.sigma_cycle,
            u: (0..l.c).map(|c| s.sigma_coll * s.theta[l.u(c)]).collect(),
            sigma_coll: s.sigma_coll,
            v,
            sigma_cc: if l.cc { s.sigma_cc } else { 0.0 },
            sigma: s.sigma,
            nu: s.nu,
            u_nft: s.u_nft.iter().map(|u| s.sigma_nft * u).collect(),
            sigma_nft: if self.spec.include_nft_re { s.sigma_nft } else { 0.0 },
        }
    }
}

/// Runs `n_chains` independent chains, chain `c` seeded with
/// `derive_seed(seed, c)`, and pools the retained draws.
pub fn sample(data: &DynamicData, spec: &DynamicSpec, cfg: &SampleConfig, exec: Exec) -> Result<DynamicPosterior> {
    spec.validate()?;
    if data.n() == 0 {
        return Err(Error::invalid("the dynamic model needs at least one cell"));
    }
    if cfg.n_chains == 0 || cfg.n_draws == 0 {
        return Err(Error::Config("n_chains and n_draws must be positive".into()));
    }
    if data.t() != spec.n_cycles {
        return Err(Error::Config(format!("data has {} cycles but the spec says {}", data.t(), spec.n_cycles)));
    }
    let layout = Layout::of(data, spec);
    let mut nft_rows = vec![Vec::new(); layout.n_nft];
    if spec.include_nft_re {
        for (i, &j) in data.nft.iter().enumerate() {
            nft_rows[j].push(i);
        }
    }
    let ctx = Ctx {
        data,
        spec,
        lin: Lin { p: data.p(), k: data.k(), t: data.t(), c: data.c(), cc: spec.include_collection_cycle },
        layout,
        h: helmert(data.t()),
        nft_rows,
        likelihood: cfg.likelihood,
    };
    let chains = map_indexed(exec, cfg.n_chains, |c| run_chain(&ctx, cfg, derive_seed(cfg.seed, c as u64)));
    let mut draws = Vec::with_capacity(cfg.n_chains * cfg.n_draws * layout.len());
    for ch in chains {
        draws.extend(ch?);
    }
    let post =
        DynamicPosterior::new(layout, Labels::of(data, &layout), spec.clone(), cfg.n_chains, cfg.n_draws, cfg.seed, draws)?;
    let bad = post.unconverged();
    if !bad.is_empty() {
        log::warn!("{} parameters have R-hat above {}: {}", bad.len(), super::RHAT_WARN, bad.join(", "));
    }
    Ok(post)
}
