//! Bayesian dynamic hedonic model on NFT x cycle cells.
//!
//! ```text
//! y = alpha + x'gamma + z'beta_tau + delta_tau + u_c + w_{c,tau} + eps
//! ```
//!
//! with sum-to-zero cycle effects, a random walk over cycles for each TVP
//! coefficient, collection and collection x cycle effects and Student-t noise.
//! [`sample`] runs a blocked Gibbs sampler (see [`sampler`]), and
//! [`log_posterior`] evaluates the unnormalised density directly so the
//! sampler can be checked against it.

pub mod diagnostics;
mod io;
pub mod sampler;

use std::collections::BTreeMap;

use libm::lgamma;
use serde::{Deserialize, Serialize};

use crate::ingest::CellTable;
use crate::stats::{quantile_sorted, sample_sd};
use crate::{Error, Result};

pub use io::{read_posterior, read_summary_csv, tvp_cycle_means, write_posterior, write_summary_csv};
pub use sampler::{sample, SampleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub sigma_cycle_scale: f64,
    pub gamma_sd: f64,
    pub betabar_sd: f64,
    pub sigma_betabar_scale: f64,
    pub omega_scale: f64,
    pub sigma_coll_scale: f64,
    pub sigma_cc_scale: f64,
    pub sigma_resid_scale: f64,
    /// Rate of the exponential prior on `nu - 2`.
    pub nu_rate: f64,
    /// The intercept has no stated prior; a wide normal keeps prior-only runs proper.
    pub alpha_sd: f64,
    pub sigma_nft_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            sigma_cycle_scale: 0.5,
            gamma_sd: 0.5,
            betabar_sd: 0.5,
            sigma_betabar_scale: 0.1,
            omega_scale: 0.07,
            sigma_coll_scale: 0.5,
            sigma_cc_scale: 0.2,
            sigma_resid_scale: 1.0,
            nu_rate: 1.0 / 28.0,
            alpha_sd: 10.0,
            sigma_nft_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicSpec {
    /// Static regressors; `None` takes every cell column outside the TVP block.
    pub static_block: Option<Vec<String>>,
    pub tvp_block: Vec<String>,
    pub n_cycles: usize,
    pub priors: Priors,
    pub include_collection_cycle: bool,
    pub include_nft_re: bool,
}

impl Default for DynamicSpec {
    fn default() -> Self {
        Self {
            static_block: None,
            tvp_block: vec!["COMPOSITION_FOCUS_SATURATION".into()],
            n_cycles: 10,
            priors: Priors::default(),
            include_collection_cycle: true,
            include_nft_re: false,
        }
    }
}

impl DynamicSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.priors;
        let scales = [
            ("sigma_cycle_scale", p.sigma_cycle_scale),
            ("gamma_sd", p.gamma_sd),
            ("betabar_sd", p.betabar_sd),
            ("sigma_betabar_scale", p.sigma_betabar_scale),
            ("omega_scale", p.omega_scale),
            ("sigma_coll_scale", p.sigma_coll_scale),
            ("sigma_cc_scale", p.sigma_cc_scale),
            ("sigma_resid_scale", p.sigma_resid_scale),
            ("nu_rate", p.nu_rate),
            ("alpha_sd", p.alpha_sd),
            ("sigma_nft_scale", p.sigma_nft_scale),
        ];
        for (name, v) in scales {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        if self.n_cycles == 0 {
            return Err(Error::Config("n_cycles must be at least 1".into()));
        }
        if let Some(s) = &self.static_block {
            if let Some(dup) = s.iter().find(|n| self.tvp_block.contains(n)) {
                return Err(Error::Config(format!("{dup} is in both the static and the TVP block")));
            }
        }
        Ok(())
    }
}

/// Cells in model-ready form. Indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicData {
    pub y: Vec<f64>,
    /// Row-major `n x P`.
    pub x: Vec<f64>,
    /// Row-major `n x K`.
    pub z: Vec<f64>,
    pub cycle: Vec<usize>,
    pub coll: Vec<usize>,
    pub nft: Vec<usize>,
    pub static_names: Vec<String>,
    pub tvp_names: Vec<String>,
    pub cycle_names: Vec<String>,
    pub collections: Vec<String>,
    pub nft_ids: Vec<String>,
}

impl DynamicData {
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.static_names.len()
    }
    pub fn k(&self) -> usize {
        self.tvp_names.len()
    }
    pub fn t(&self) -> usize {
        self.cycle_names.len()
    }
    pub fn c(&self) -> usize {
        self.collections.len()
    }

    /// Builds model data from aggregated cells. `cycle_names` defaults to
    /// `cycle_1..cycle_T`.
    pub fn from_cells(table: &CellTable, spec: &DynamicSpec, cycle_names: Option<&[String]>) -> Result<Self> {
        spec.validate()?;
        if table.is_empty() {
            return Err(Error::invalid("the dynamic model needs at least one cell"));
        }
        let cycle_names: Vec<String> = match cycle_names {
            Some(n) => n.to_vec(),
            None => (1..=spec.n_cycles).map(|i| format!("cycle_{i}")).collect(),
        };
        if cycle_names.len() != spec.n_cycles {
            return Err(Error::Config(format!(
                "n_cycles is {} but {} cycle names were given",
                spec.n_cycles,
                cycle_names.len()
            )));
        }
        let lookup = |name: &String| {
            table
                .column_index(name)
                .ok_or_else(|| Error::invalid(format!("cell table has no column {name}")))
        };
        let tvp_idx: Vec<usize> = spec.tvp_block.iter().map(lookup).collect::<Result<_>>()?;
        let static_names: Vec<String> = match &spec.static_block {
            Some(s) => s.clone(),
            None => table.regressor_names.iter().filter(|n| !spec.tvp_block.contains(n)).cloned().collect(),
        };
        let static_idx: Vec<usize> = static_names.iter().map(lookup).collect::<Result<_>>()?;

        let mut colls: BTreeMap<&str, usize> = BTreeMap::new();
        let mut nfts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &table.cells {
            colls.insert(&c.collection_code, 0);
            nfts.insert(&c.nft_id, 0);
        }
        for (i, v) in colls.values_mut().enumerate() {
            *v = i;
        }
        for (i, v) in nfts.values_mut().enumerate() {
            *v = i;
        }
        let n = table.len();
        let mut d = DynamicData {
            y: Vec::with_capacity(n),
            x: Vec::with_capacity(n * static_idx.len()),
            z: Vec::with_capacity(n * tvp_idx.len()),
            cycle: Vec::with_capacity(n),
            coll: Vec::with_capacity(n),
            nft: Vec::with_capacity(n),
            static_names,
            tvp_names: spec.tvp_block.clone(),
            cycle_names,
            collections: colls.keys().map(|s| s.to_string()).collect(),
            nft_ids: nfts.keys().map(|s| s.to_string()).collect(),
        };
        for (row, c) in table.cells.iter().enumerate() {
            if c.cycle_index == 0 || c.cycle_index > spec.n_cycles {
                return Err(Error::invalid(format!(
                    "cell {row} ({}) has cycle index {} outside 1..={}",
                    c.nft_id, c.cycle_index, spec.n_cycles
                )));
            }
            let vals = static_idx.iter().chain(&tvp_idx).map(|&j| c.regressor_means[j]);
            if !c.y_median.is_finite() || vals.clone().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("cell {row} ({}) has non-finite values", c.nft_id)));
            }
            d.y.push(c.y_median);
            d.x.extend(static_idx.iter().map(|&j| c.regressor_means[j]));
            d.z.extend(tvp_idx.iter().map(|&j| c.regressor_means[j]));
            d.cycle.push(c.cycle_index - 1);
            d.coll.push(colls[c.collection_code.as_str()]);
            d.nft.push(nfts[c.nft_id.as_str()]);
        }
        Ok(d)
    }
}

/// Offsets of every scalar in a flattened draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub p: usize,
    pub k: usize,
    pub t: usize,
    pub c: usize,
    pub n_nft: usize,
}

impl Layout {
    pub fn of(data: &DynamicData, spec: &DynamicSpec) -> Self {
        Self {
            p: data.p(),
            k: data.k(),
            t: data.t(),
            c: data.c(),
            n_nft: if spec.include_nft_re { data.nft_ids.len() } else { 0 },
        }
    }
    pub fn alpha(&self) -> usize {
        0
    }
    pub fn gamma(&self, j: usize) -> usize {
        1 + j
    }
    pub fn betabar(&self, k: usize) -> usize {
        1 + self.p + k
    }
    pub fn sigma_betabar(&self, k: usize) -> usize {
        1 + self.p + self.k + k
    }
    pub fn omega(&self, k: usize) -> usize {
        1 + self.p + 2 * self.k + k
    }
    pub fn b(&self, k: usize, tau: usize) -> usize {
        1 + self.p + 3 * self.k + k * self.t + tau
    }
    pub fn delta0(&self, tau: usize) -> usize {
        1 + self.p + 3 * self.k + self.k * self.t + tau
    }
    pub fn delta(&self, tau: usize) -> usize {
        self.delta0(0) + self.t + tau
    }
    pub fn sigma_cycle(&self) -> usize {
        self.delta0(0) + 2 * self.t
    }
    pub fn u(&self, c: usize) -> usize {
        self.sigma_cycle() + 1 + c
    }
    pub fn sigma_coll(&self) -> usize {
        self.u(0) + self.c
    }
    pub fn v(&self, c: usize, tau: usize) -> usize {
        self.sigma_coll() + 1 + c * self.t + tau
    }
    pub fn w(&self, c: usize, tau: usize) -> usize {
        self.v(0, 0) + self.c * self.t + c * self.t + tau
    }
    pub fn sigma_cc(&self) -> usize {
        self.v(0, 0) + 2 * self.c * self.t
    }
    pub fn sigma(&self) -> usize {
        self.sigma_cc() + 1
    }
    pub fn nu(&self) -> usize {
        self.sigma_cc() + 2
    }
    pub fn sigma_nft(&self) -> usize {
        self.sigma_cc() + 3
    }
    pub fn u_nft(&self, i: usize) -> usize {
        self.sigma_cc() + 4 + i
    }
    pub fn lp(&self) -> usize {
        self.u_nft(0) + self.n_nft
    }
    pub fn len(&self) -> usize {
        self.lp() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Labels attached to a posterior so tables can name their rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub static_names: Vec<String>,
    pub tvp_names: Vec<String>,
    pub cycle_names: Vec<String>,
    pub collections: Vec<String>,
    pub nft_ids: Vec<String>,
}

impl Labels {
    pub fn of(data: &DynamicData, layout: &Layout) -> Self {
        Self {
            static_names: data.static_names.clone(),
            tvp_names: data.tvp_names.clone(),
            cycle_names: data.cycle_names.clone(),
            collections: data.collections.clone(),
            nft_ids: if layout.n_nft > 0 { data.nft_ids.clone() } else { Vec::new() },
        }
    }

    /// Scalar names in layout order.
    pub fn scalar_names(&self, l: &Layout) -> Vec<String> {
        let mut out = Vec::with_capacity(l.len());
        out.push("alpha".to_string());
        out.extend(self.static_names.iter().map(|n| format!("gamma[{n}]")));
        for what in ["betabar", "sigma_betabar", "omega"] {
            out.extend(self.tvp_names.iter().map(|n| format!("{what}[{n}]")));
        }
        for n in &self.tvp_names {
            out.extend(self.cycle_names.iter().map(|c| format!("B[{n},{c}]")));
        }
        out.extend(self.cycle_names.iter().map(|c| format!("delta0[{c}]")));
        out.extend(self.cycle_names.iter().map(|c| format!("delta[{c}]")));
        out.push("sigma_cycle".into());
        out.extend(self.collections.iter().map(|c| format!("u[{c}]")));
        out.push("sigma_coll".into());
        for what in ["v", "w"] {
            for c in &self.collections {
                out.extend(self.cycle_names.iter().map(|t| format!("{what}[{c},{t}]")));
            }
        }
        out.extend(["sigma_cc", "sigma", "nu", "sigma_nft"].map(String::from));
        out.extend(self.nft_ids.iter().map(|n| format!("u_nft[{n}]")));
        out.push("lp".into());
        debug_assert_eq!(out.len(), l.len());
        out
    }
}

/// One point in parameter space, in the parameterisation of the model
/// statement: raw `delta0` and `v`, centred `u` and `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub alpha: f64,
    pub gamma: Vec<f64>,
    pub betabar: Vec<f64>,
    pub sigma_betabar: Vec<f64>,
    pub omega: Vec<f64>,
    /// Row-major `K x T`.
    pub b: Vec<f64>,
    pub delta0: Vec<f64>,
    pub sigma_cycle: f64,
    pub u: Vec<f64>,
    pub sigma_coll: f64,
    /// Row-major `C x T`.
    pub v: Vec<f64>,
    pub sigma_cc: f64,
    pub sigma: f64,
    pub nu: f64,
    pub u_nft: Vec<f64>,
    pub sigma_nft: f64,
}

/// `s * (x - mean(x))`.
fn centre_scaled(x: &[f64], s: f64) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| s * (v - m)).collect()
}

impl Params {
    pub fn delta(&self) -> Vec<f64> {
        centre_scaled(&self.delta0, self.sigma_cycle)
    }

    /// Row-major `C x T`; each collection row is centred.
    pub fn w(&self, t: usize) -> Vec<f64> {
        if t == 0 {
            return Vec::new();
        }
        self.v.chunks(t).flat_map(|row| centre_scaled(row, self.sigma_cc)).collect()
    }

    pub fn check(&self, l: &Layout, spec: &DynamicSpec) -> Result<()> {
        let dims = [
            ("gamma", self.gamma.len(), l.p),
            ("betabar", self.betabar.len(), l.k),
            ("sigma_betabar", self.sigma_betabar.len(), l.k),
            ("omega", self.omega.len(), l.k),
            ("B", self.b.len(), l.k * l.t),
            ("delta0", self.delta0.len(), l.t),
            ("u", self.u.len(), l.c),
            ("v", self.v.len(), if spec.include_collection_cycle { l.c * l.t } else { self.v.len() }),
            ("u_nft", self.u_nft.len(), l.n_nft),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::invalid(format!("parameter {name} has length {got}, expected {want}")));
            }
        }
        Ok(())
    }

    pub fn to_flat(&self, l: &Layout, lp: f64) -> Vec<f64> {
        let mut out = vec![0.0; l.len()];
        out[l.alpha()] = self.alpha;
        for j in 0..l.p {
            out[l.gamma(j)] = self.gamma[j];
        }
        for k in 0..l.k {
            out[l.betabar(k)] = self.betabar[k];
            out[l.sigma_betabar(k)] = self.sigma_betabar[k];
            out[l.omega(k)] = self.omega[k];
            for tau in 0..l.t {
                out[l.b(k, tau)] = self.b[k * l.t + tau];
            }
        }
        let delta = self.delta();
        for tau in 0..l.t {
            out[l.delta0(tau)] = self.delta0[tau];
            out[l.delta(tau)] = delta[tau];
        }
        out[l.sigma_cycle()] = self.sigma_cycle;
        for c in 0..l.c {
            out[l.u(c)] = self.u[c];
        }
        out[l.sigma_coll()] = self.sigma_coll;
        if self.v.len() == l.c * l.t {
            let w = self.w(l.t);
            for c in 0..l.c {
                for tau in 0..l.t {
                    out[l.v(c, tau)] = self.v[c * l.t + tau];
                    out[l.w(c, tau)] = w[c * l.t + tau];
                }
            }
        }
        out[l.sigma_cc()] = self.sigma_cc;
        out[l.sigma()] = self.sigma;
        out[l.nu()] = self.nu;
        out[l.sigma_nft()] = self.sigma_nft;
        for i in 0..l.n_nft {
            out[l.u_nft(i)] = self.u_nft[i];
        }
        out[l.lp()] = lp;
        out
    }

    pub fn from_flat(l: &Layout, f: &[f64]) -> Self {
        Self {
            alpha: f[l.alpha()],
            gamma: (0..l.p).map(|j| f[l.gamma(j)]).collect(),
            betabar: (0..l.k).map(|k| f[l.betabar(k)]).collect(),
            sigma_betabar: (0..l.k).map(|k| f[l.sigma_betabar(k)]).collect(),
            omega: (0..l.k).map(|k| f[l.omega(k)]).collect(),
            b: (0..l.k).flat_map(|k| (0..l.t).map(move |tau| (k, tau))).map(|(k, tau)| f[l.b(k, tau)]).collect(),
            delta0: (0..l.t).map(|tau| f[l.delta0(tau)]).collect(),
            sigma_cycle: f[l.sigma_cycle()],
            u: (0..l.c).map(|c| f[l.u(c)]).collect(),
            sigma_coll: f[l.sigma_coll()],
            v: (0..l.c).flat_map(|c| (0..l.t).map(move |tau| (c, tau))).map(|(c, tau)| f[l.v(c, tau)]).collect(),
            sigma_cc: f[l.sigma_cc()],
            sigma: f[l.sigma()],
            nu: f[l.nu()],
            u_nft: (0..l.n_nft).map(|i| f[l.u_nft(i)]).collect(),
            sigma_nft: f[l.sigma_nft()],
        }
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn normal_lpdf(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

fn half_normal_lpdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + normal_lpdf(x, 0.0, scale)
}

/// Log density of a location-zero Student-t with scale `sigma`.
pub fn student_t_lpdf(r: f64, nu: f64, sigma: f64) -> f64 {
    lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln() - sigma.ln()
        - 0.5 * (nu + 1.0) * (r * r / (nu * sigma * sigma)).ln_1p()
}

/// Mean of each cell under `params`.
pub fn fitted(params: &Params, data: &DynamicData, spec: &DynamicSpec) -> Vec<f64> {
    let (p, k, t) = (data.p(), data.k(), data.t());
    let delta = params.delta();
    let w = if spec.include_collection_cycle { params.w(t) } else { Vec::new() };
    (0..data.n())
        .map(|i| {
            let tau = data.cycle[i];
            let c = data.coll[i];
            let mut m = params.alpha + delta[tau] + params.u[c];
            for j in 0..p {
                m += data.x[i * p + j] * params.gamma[j];
            }
            for kk in 0..k {
                m += data.z[i * k + kk] * params.b[kk * t + tau];
            }
            if spec.include_collection_cycle {
                m += w[c * t + tau];
            }
            if spec.include_nft_re {
                m += params.u_nft[data.nft[i]];
            }
            m
        })
        .collect()
}

/// Log prior plus log likelihood; `-inf` outside the support or on any
/// non-finite value.
pub fn log_posterior(params: &Params, data: &DynamicData, spec: &DynamicSpec) -> f64 {
    let lp = log_prior(params, data, spec) + log_likelihood(params, data, spec);
    if lp.is_finite() {
        lp
    } else {
        f64::NEG_INFINITY
    }
}

pub fn log_prior(params: &Params, data: &DynamicData, spec: &DynamicSpec) -> f64 {
    let pr = &spec.priors;
    let t = data.t();
    if params.nu <= 2.0 || params.sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut lp = normal_lpdf(params.alpha, 0.0, pr.alpha_sd);
    lp += params.gamma.iter().map(|g| normal_lpdf(*g, 0.0, pr.gamma_sd)).sum::<f64>();
    for k in 0..data.k() {
        let (bb, sb, om) = (params.betabar[k], params.sigma_betabar[k], params.omega[k]);
        lp += normal_lpdf(bb, 0.0, pr.betabar_sd);
        lp += half_normal_lpdf(sb, pr.sigma_betabar_scale);
        lp += half_normal_lpdf(om, pr.omega_scale);
        let path = &params.b[k * t..(k + 1) * t];
        lp += normal_lpdf(path[0], bb, sb);
        for tau in 1..t {
            lp += normal_lpdf(path[tau], path[tau - 1], om);
        }
    }
    lp += params.delta0.iter().map(|d| normal_lpdf(*d, 0.0, 1.0)).sum::<f64>();
    lp += half_normal_lpdf(params.sigma_cycle, pr.sigma_cycle_scale);
    lp += params.u.iter().map(|u| normal_lpdf(*u, 0.0, params.sigma_coll)).sum::<f64>();
    lp += half_normal_lpdf(params.sigma_coll, pr.sigma_coll_scale);
    if spec.include_collection_cycle {
        lp += params.v.iter().map(|v| normal_lpdf(*v, 0.0, 1.0)).sum::<f64>();
        lp += half_normal_lpdf(params.sigma_cc, pr.sigma_cc_scale);
    }
    if spec.include_nft_re {
        lp += params.u_nft.iter().map(|u| normal_lpdf(*u, 0.0, params.sigma_nft)).sum::<f64>();
        lp += half_normal_lpdf(params.sigma_nft, pr.sigma_nft_scale);
    }
    lp += half_normal_lpdf(params.sigma, pr.sigma_resid_scale);
    lp += pr.nu_rate.ln() - pr.nu_rate * (params.nu - 2.0);
    lp
}

pub fn log_likelihood(params: &Params, data: &DynamicData, spec: &DynamicSpec) -> f64 {
    if params.nu <= 2.0 || params.sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    fitted(params, data, spec)
        .iter()
        .zip(&data.y)
        .map(|(m, y)| student_t_lpdf(y - m, params.nu, params.sigma))
        .sum()
}

/// Retained draws from all chains, flattened by [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicPosterior {
    pub layout: Layout,
    pub labels: Labels,
    pub spec: DynamicSpec,
    pub n_chains: usize,
    pub n_draws: usize,
    pub seed: u64,
    /// Chain-major, then draw, then scalar.
    pub draws: Vec<f64>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
}

/// R̂ above this raises the convergence warning.
pub const RHAT_WARN: f64 = 1.1;

impl DynamicPosterior {
    /// Assembles a posterior and computes diagnostics for every scalar.
    pub fn new(
        layout: Layout,
        labels: Labels,
        spec: DynamicSpec,
        n_chains: usize,
        n_draws: usize,
        seed: u64,
        draws: Vec<f64>,
    ) -> Result<Self> {
        if draws.len() != n_chains * n_draws * layout.len() {
            return Err(Error::invalid(format!(
                "expected {} draw values, got {}",
                n_chains * n_draws * layout.len(),
                draws.len()
            )));
        }
        if n_chains == 0 || n_draws == 0 {
            return Err(Error::invalid("posterior must hold at least one draw"));
        }
        let mut post = Self { layout, labels, spec, n_chains, n_draws, seed, draws, rhat: Vec::new(), ess: Vec::new() };
        let (rhat, ess) = (0..layout.len())
            .map(|j| {
                let chains = post.chains_of(j);
                let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
                (diagnostics::split_rhat(&refs), diagnostics::ess(&refs))
            })
            .unzip();
        post.rhat = rhat;
        post.ess = ess;
        Ok(post)
    }

    pub fn draw(&self, chain: usize, i: usize) -> &[f64] {
        let n = self.layout.len();
        let start = (chain * self.n_draws + i) * n;
        &self.draws[start..start + n]
    }

    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks(self.layout.len())
    }

    pub fn total_draws(&self) -> usize {
        self.n_chains * self.n_draws
    }

    /// Values of scalar `j`, one vector per chain.
    pub fn chains_of(&self, j: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|i| self.draw(c, i)[j]).collect())
            .collect()
    }

    /// Pooled values of scalar `j`.
    pub fn values(&self, j: usize) -> Vec<f64> {
        self.iter_draws().map(|d| d[j]).collect()
    }

    pub fn params(&self, chain: usize, i: usize) -> Params {
        Params::from_flat(&self.layout, self.draw(chain, i))
    }

    /// Scalars whose R̂ exceeds [`RHAT_WARN`].
    pub fn unconverged(&self) -> Vec<String> {
        let names = self.labels.scalar_names(&self.layout);
        self.rhat
            .iter()
            .zip(names)
            .filter(|(r, _)| **r > RHAT_WARN)
            .map(|(_, n)| n)
            .collect()
    }

    pub fn convergence_warning(&self) -> bool {
        self.rhat.iter().any(|r| *r > RHAT_WARN)
    }

    pub fn summary_of(&self, j: usize) -> Summary {
        Summary::from_values(self.values(j), self.rhat[j], self.ess[j])
    }
}

/// Posterior mean, SD and central 94% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q03: f64,
    pub q97: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl Summary {
    pub fn from_values(mut v: Vec<f64>, rhat: f64, ess: f64) -> Self {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = sample_sd(&v);
        v.sort_by(f64::total_cmp);
        Self { mean, sd, q03: quantile_sorted(&v, 0.03), q97: quantile_sorted(&v, 0.97), rhat, ess }
    }

    pub fn excludes_zero(&self) -> bool {
        self.q03 > 0.0 || self.q97 < 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvpCycleRow {
    pub variable: String,
    pub cycle: String,
    /// 0-based position in the cycle table.
    pub cycle_index: usize,
    pub summary: Summary,
    /// 1 = largest posterior mean.
    pub rank: usize,
    pub positive: bool,
}

/// Per-cycle TVP table for each TVP variable, in cycle order, with ranks by
/// posterior mean (descending, ties broken by cycle order).
pub fn summarize_tvp(post: &DynamicPosterior) -> Vec<TvpCycleRow> {
    let l = &post.layout;
    let mut out = Vec::new();
    for k in 0..l.k {
        let mut rows: Vec<TvpCycleRow> = (0..l.t)
            .map(|tau| {
                let s = post.summary_of(l.b(k, tau));
                TvpCycleRow {
                    variable: post.labels.tvp_names[k].clone(),
                    cycle: post.labels.cycle_names[tau].clone(),
                    cycle_index: tau,
                    summary: s,
                    rank: 0,
                    positive: s.mean > 0.0,
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..l.t).collect();
        order.sort_by(|&a, &b| rows[b].summary.mean.total_cmp(&rows[a].summary.mean).then(a.cmp(&b)));
        for (r, &i) in order.iter().enumerate() {
            rows[i].rank = r + 1;
        }
        out.extend(rows);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleEffectRow {
    pub cycle: String,
    pub summary: Summary,
    /// `100 (exp(mean) - 1)`.
    pub pct: f64,
}

/// Cycle effects with their semi-elasticity reading.
pub fn cycle_level_summary(post: &DynamicPosterior) -> Vec<CycleEffectRow> {
    let l = &post.layout;
    (0..l.t)
        .map(|tau| {
            let s = post.summary_of(l.delta(tau));
            CycleEffectRow { cycle: post.labels.cycle_names[tau].clone(), summary: s, pct: 100.0 * s.mean.exp_m1() }
        })
        .collect()
}

/// One line of `dynamic_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub block: String,
    pub variable: String,
    pub cycle: String,
    pub summary: Summary,
    pub rank: Option<usize>,
    pub sign: Option<String>,
}

fn sign_label(positive: bool) -> String {
    if positive { "positive" } else { "nonpositive" }.to_string()
}

/// All rows of the dynamic summary table: static coefficients, TVP means
/// across cycles, the per-cycle TVP path, cycle effects and scale parameters.
pub fn summary_table(post: &DynamicPosterior) -> Vec<SummaryRow> {
    let l = &post.layout;
    let lab = &post.labels;
    let row = |block: &str, variable: &str, cycle: &str, s: Summary| SummaryRow {
        block: block.into(),
        variable: variable.into(),
        cycle: cycle.into(),
        summary: s,
        rank: None,
        sign: None,
    };
    let mut out = vec![row("static", "Intercept", "", post.summary_of(l.alpha()))];
    for (j, n) in lab.static_names.iter().enumerate() {
        out.push(row("static", n, "", post.summary_of(l.gamma(j))));
    }
    let tvp = summarize_tvp(post);
    for k in 0..l.k {
        // average over cycles, per draw
        let avg: Vec<f64> =
            post.iter_draws().map(|d| (0..l.t).map(|tau| d[l.b(k, tau)]).sum::<f64>() / l.t as f64).collect();
        let chains: Vec<Vec<f64>> = avg.chunks(post.n_draws).map(<[f64]>::to_vec).collect();
        let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let s = Summary::from_values(avg.clone(), diagnostics::split_rhat(&refs), diagnostics::ess(&refs));
        out.push(row("tvp_mean", &lab.tvp_names[k], "", s));
        let means: Vec<f64> = tvp[k * l.t..(k + 1) * l.t].iter().map(|r| r.summary.mean).collect();
        let spread = sample_sd(&means);
        out.push(row(
            "tvp_mean",
            &format!("{}:sd_across_cycles", lab.tvp_names[k]),
            "",
            Summary { mean: spread, sd: f64::NAN, q03: f64::NAN, q97: f64::NAN, rhat: f64::NAN, ess: f64::NAN },
        ));
    }
    for r in &tvp {
        let mut x = row("tvp_cycle", &r.variable, &r.cycle, r.summary);
        x.rank = Some(r.rank);
        x.sign = Some(sign_label(r.positive));
        out.push(x);
    }
    let ce = cycle_level_summary(post);
    let mut order: Vec<usize> = (0..ce.len()).collect();
    order.sort_by(|&a, &b| ce[b].summary.mean.total_cmp(&ce[a].summary.mean).then(a.cmp(&b)));
    let mut ranks = vec![0; ce.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    for (i, c) in ce.iter().enumerate() {
        let mut x = row("cycle_effect", "delta", &c.cycle, c.summary);
        x.rank = Some(ranks[i]);
        x.sign = Some(sign_label(c.summary.mean > 0.0));
        out.push(x);
    }
    for (k, n) in lab.tvp_names.iter().enumerate() {
        out.push(row("variance", &format!("betabar[{n}]"), "", post.summary_of(l.betabar(k))));
        out.push(row("variance", &format!("sigma_betabar[{n}]"), "", post.summary_of(l.sigma_betabar(k))));
        out.push(row("variance", &format!("omega[{n}]"), "", post.summary_of(l.omega(k))));
    }
    out.push(row("variance", "sigma", "", post.summary_of(l.sigma())));
    out.push(row("variance", "sigma_coll", "", post.summary_of(l.sigma_coll())));
    if post.spec.include_collection_cycle {
        out.push(row("variance", "sigma_cc", "", post.summary_of(l.sigma_cc())));
    }
    out.push(row("variance", "sigma_cycle", "", post.summary_of(l.sigma_cycle())));
    out.push(row("variance", "nu", "", post.summary_of(l.nu())));
    if post.spec.include_nft_re {
        out.push(row("variance", "sigma_nft", "", post.summary_of(l.sigma_nft())));
    }
    out
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Ten cells over 3 cycles and 2 collections, P = 2, K = 1.
    pub fn fixture() -> (DynamicData, DynamicSpec, Params) {
        let spec = DynamicSpec { n_cycles: 3, ..DynamicSpec::default() };
        let data = DynamicData {
            y: vec![7.1, 6.4, 8.0, 5.5, 6.9, 7.7, 9.2, 6.0, 6.6, 7.3],
            x: vec![
                0.3, -1.0, 1.2, 0.4, -0.7, 0.0, 0.1, 1.5, -1.4, -0.2, 0.9, 0.6, -0.3, -1.1, 2.0, 0.2, 0.5, -0.5,
                -0.8, 0.7,
            ],
            z: vec![0.5, -1.2, 0.3, 1.1, -0.4, 0.0, 2.1, -0.9, 0.6, -1.5],
            cycle: vec![0, 0, 1, 1, 2, 2, 0, 1, 2, 2],
            coll: vec![0, 1, 0, 1, 0, 1, 1, 0, 0, 1],
            nft: (0..10).collect(),
            static_names: vec!["x1".into(), "x2".into()],
            tvp_names: vec!["z1".into()],
            cycle_names: vec!["a".into(), "b".into(), "c".into()],
            collections: vec!["A".into(), "B".into()],
            nft_ids: (0..10).map(|i| format!("n{i}")).collect(),
        };
        let params = Params {
            alpha: 7.0,
            gamma: vec![0.2, -0.1],
            betabar: vec![0.05],
            sigma_betabar: vec![0.08],
            omega: vec![0.06],
            b: vec![0.1, 0.03, -0.05],
            delta0: vec![0.4, -1.1, 0.3],
            sigma_cycle: 0.35,
            u: vec![0.2, -0.3],
            sigma_coll: 0.6,
            v: vec![0.5, -0.2, 1.0, -0.7, 0.1, 0.3],
            sigma_cc: 0.15,
            sigma: 0.7,
            nu: 4.5,
            u_nft: Vec::new(),
            sigma_nft: 0.0,
        };
        (data, spec, params)
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::fixture;
    use super::*;

    #[test]
    fn layout_names_match_length() {
        let (data, spec, _) = fixture();
        let l = Layout::of(&data, &spec);
        let names = Labels::of(&data, &l).scalar_names(&l);
        assert_eq!(names.len(), l.len());
        assert_eq!(names[l.b(0, 2)], "B[z1,c]");
        assert_eq!(names[l.w(1, 0)], "w[B,a]");
        assert_eq!(names[l.nu()], "nu");
    }

    #[test]
    fn flat_round_trip() {
        let (data, spec, p) = fixture();
        let l = Layout::of(&data, &spec);
        let back = Params::from_flat(&l, &p.to_flat(&l, 0.0));
        assert_eq!(back, p);
    }

    #[test]
    fn centring_sums_to_zero() {
        let (_, _, p) = fixture();
        assert!(p.delta().iter().sum::<f64>().abs() < 1e-15);
        for row in p.w(3).chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn gaussian_limit_of_t() {
        let g = -LN_SQRT_2PI - 0.7f64.ln();
        assert!((student_t_lpdf(0.0, 1e6, 0.7) - g).abs() < 1e-3);
    }

    #[test]
    fn wider_scale_lowers_peak() {
        assert!(student_t_lpdf(0.0, 5.0, 2.0) < student_t_lpdf(0.0, 5.0, 1.0));
    }

    #[test]
    fn out_of_support_is_neg_inf() {
        let (data, spec, mut p) = fixture();
        p.nu = 2.0;
        assert_eq!(log_posterior(&p, &data, &spec), f64::NEG_INFINITY);
        p.nu = 4.0;
        p.sigma_cycle = -0.1;
        assert_eq!(log_posterior(&p, &data, &spec), f64::NEG_INFINITY);
        p.sigma_cycle = 0.1;
        p.alpha = f64::NAN;
        assert_eq!(log_posterior(&p, &data, &spec), f64::NEG_INFINITY);
    }
}
