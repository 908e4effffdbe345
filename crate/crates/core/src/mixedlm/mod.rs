//! Static hedonic model: fixed effects plus crossed random intercepts for
//! NFT and collection, estimated by REML.

pub mod optim;
pub mod reml;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ingest::ObservationTable;
use crate::stats::two_sided_p;
use crate::{Error, Result};

pub use reml::{evaluate, reml_loglik, CrossProducts, Design, Evaluation};

pub const INTERCEPT: &str = "Intercept";
pub const MONTH_PREFIX: &str = "month_";
const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticSpec {
    /// Fixed-effect regressors in order; `None` uses every column of the frame.
    pub fixed_columns: Option<Vec<String>>,
    pub month_effects: bool,
    /// Month index used as reference level; `None` means the earliest month present.
    pub month_baseline: Option<i32>,
    pub include_nft_re: bool,
    pub include_collection_re: bool,
    /// z-score the regressors before fitting (idempotent on a standardised frame).
    pub standardize: bool,
    pub max_iter: usize,
    /// Column groups removed, in order, when a fit fails to converge.
    pub retry_ladder: Vec<Vec<String>>,
}

impl Default for StaticSpec {
    fn default() -> Self {
        Self {
            fixed_columns: None,
            month_effects: true,
            month_baseline: None,
            include_nft_re: true,
            include_collection_re: true,
            standardize: true,
            max_iter: 2000,
            retry_ladder: vec![
                vec!["SP500_return".into(), "NASDAQCOM_return".into()],
                vec!["CNN_PCA_*".into(), "STYLE_PCA_*".into()],
            ],
        }
    }
}

impl StaticSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

fn matches_pattern(name: &str, pattern: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => name == pattern,
    }
}

/// Design matrix with an intercept, the chosen regressors and month dummies.
///
/// Rows are put in a canonical order (NFT, collection, date, then values) so
/// that the fit does not depend on input row order.
pub fn build_design(table: &ObservationTable, spec: &StaticSpec) -> Result<Design> {
    let cols: Vec<String> = match &spec.fixed_columns {
        Some(c) => c.clone(),
        None => table.regressor_names.clone(),
    };
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| table.column_index(c).ok_or_else(|| Error::invalid(format!("frame has no column {c}"))))
        .collect::<Result<_>>()?;
    for c in &cols {
        if cols.contains(&format!("{c}_SIN")) || cols.contains(&format!("{c}_COS")) {
            return Err(Error::invalid(format!("raw angle {c} cannot enter next to its sin/cos pair")));
        }
    }
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&table.rows[a], &table.rows[b]);
        ra.nft_id
            .cmp(&rb.nft_id)
            .then_with(|| ra.collection_code.cmp(&rb.collection_code))
            .then_with(|| ra.date.cmp(&rb.date))
            .then_with(|| ra.y.total_cmp(&rb.y))
            .then_with(|| {
                ra.regressors
                    .iter()
                    .zip(&rb.regressors)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let rows: Vec<&crate::ingest::SaleObservation> = order.iter().map(|&i| &table.rows[i]).collect();
    for r in &rows {
        if !r.y.is_finite() || idx.iter().any(|&j| !r.regressors[j].is_finite()) {
            return Err(Error::invalid(format!("non-finite value for NFT {} reached the design", r.nft_id)));
        }
    }

    let mut months: Vec<(i32, String)> = Vec::new();
    if spec.month_effects {
        let mut seen: BTreeMap<i32, String> = BTreeMap::new();
        for r in &rows {
            seen.entry(r.month_index).or_insert_with(|| r.date.format("%Y-%m").to_string());
        }
        let baseline = match spec.month_baseline {
            Some(b) if seen.contains_key(&b) => b,
            Some(b) => return Err(Error::invalid(format!("baseline month {b} has no observations"))),
            None => seen.keys().next().copied().unwrap_or(0),
        };
        if let (Some(lo), Some(hi)) = (seen.keys().next(), seen.keys().last()) {
            for m in *lo..=*hi {
                if !seen.contains_key(&m) {
                    info!("month index {m} has no observations; no dummy created");
                }
            }
        }
        months = seen.into_iter().filter(|(m, _)| *m != baseline).collect();
    }

    let mut names = vec![INTERCEPT.to_string()];
    names.extend(cols.iter().cloned());
    names.extend(months.iter().map(|(_, label)| format!("{MONTH_PREFIX}{label}")));
    let p = names.len();
    let month_pos: BTreeMap<i32, usize> =
        months.iter().enumerate().map(|(k, (m, _))| (*m, 1 + cols.len() + k)).collect();
    let mut x = DMatrix::zeros(rows.len(), p);
    for (i, r) in rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for (k, &j) in idx.iter().enumerate() {
            x[(i, 1 + k)] = r.regressors[j];
        }
        if let Some(&k) = month_pos.get(&r.month_index) {
            x[(i, k)] = 1.0;
        }
    }
    let nft_levels: Vec<String> =
        rows.iter().map(|r| r.nft_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let coll_levels: Vec<String> =
        rows.iter().map(|r| r.collection_code.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let nft_map: BTreeMap<&str, usize> = nft_levels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let coll_map: BTreeMap<&str, usize> = coll_levels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    Ok(Design {
        names,
        y: rows.iter().map(|r| r.y).collect(),
        x,
        nft: rows.iter().map(|r| nft_map[r.nft_id.as_str()]).collect(),
        coll: rows.iter().map(|r| coll_map[r.collection_code.as_str()]).collect(),
        nft_levels,
        coll_levels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticFitResult {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p_value: Vec<f64>,
    pub sigma2_nft: f64,
    pub sigma2_coll: f64,
    pub sigma2_resid: f64,
    /// REML log-likelihood at the optimum.
    pub loglik: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub n_nft_groups: usize,
    pub n_collections: usize,
    pub boundary_nft: bool,
    pub boundary_coll: bool,
    /// False when every NFT has a single observation, so its variance cannot
    /// be separated from the residual; it is then fixed at 0.
    pub nft_identified: bool,
    pub iterations: usize,
    /// Columns removed by the retry ladder.
    pub dropped: Vec<String>,
}

impl StaticFitResult {
    pub fn coef(&self, name: &str) -> Option<(f64, f64)> {
        self.names.iter().position(|n| n == name).map(|k| (self.beta[k], self.se[k]))
    }

    pub fn icc(&self) -> Result<f64> {
        icc(self.sigma2_nft, self.sigma2_coll, self.sigma2_resid)
    }

    pub fn ci(&self, k: usize) -> (f64, f64) {
        (self.beta[k] - Z975 * self.se[k], self.beta[k] + Z975 * self.se[k])
    }
}

/// Share of variance due to the two grouping factors.
pub fn icc(sigma2_nft: f64, sigma2_coll: f64, sigma2_resid: f64) -> Result<f64> {
    let total = sigma2_nft + sigma2_coll + sigma2_resid;
    if [sigma2_nft, sigma2_coll, sigma2_resid].iter().any(|v| *v < 0.0 || !v.is_finite()) || total <= 0.0 {
        return Err(Error::invalid("ICC needs nonnegative variances that are not all zero"));
    }
    Ok((sigma2_nft + sigma2_coll) / total)
}

/// Proportional change in `1 + price` for a unit change in the regressor.
pub fn semi_elasticity(beta: f64) -> f64 {
    beta.exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub include_nft_re: bool,
    pub include_collection_re: bool,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { include_nft_re: true, include_collection_re: true, max_iter: 2000 }
    }
}

/// Newton refinement of the profiled deviance over the free θ coordinates,
/// with central finite differences.
fn polish(f: &mut dyn FnMut([f64; 2]) -> f64, mut theta: [f64; 2], free: [bool; 2]) -> [f64; 2] {
    let active: Vec<usize> = (0..2).filter(|&k| free[k] && theta[k] > 1e-6).collect();
    if active.is_empty() {
        return theta;
    }
    let mut fx = f(theta);
    for _ in 0..20 {
        let h = 1e-4;
        let at = |t: [f64; 2], k: usize, d: f64| {
            let mut t = t;
            t[k] += d;
            t
        };
        let m = active.len();
        let mut g = nalgebra::DVector::zeros(m);
        let mut hm = DMatrix::zeros(m, m);
        for (a, &k) in active.iter().enumerate() {
            let fp = f(at(theta, k, h));
            let fm = f(at(theta, k, -h));
            g[a] = (fp - fm) / (2.0 * h);
            hm[(a, a)] = (fp - 2.0 * fx + fm) / (h * h);
            for (b, &l) in active.iter().enumerate().skip(a + 1) {
                let fpp = f(at(at(theta, k, h), l, h));
                let fpm = f(at(at(theta, k, h), l, -h));
                let fmp = f(at(at(theta, k, -h), l, h));
                let fmm = f(at(at(theta, k, -h), l, -h));
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                hm[(a, b)] = v;
                hm[(b, a)] = v;
            }
        }
        let Some(ch) = hm.cholesky() else { break };
        let step = ch.solve(&(-&g));
        let mut cand = theta;
        for (a, &k) in active.iter().enumerate() {
            cand[k] = (theta[k] + step[a]).abs();
        }
        let fc = f(cand);
        if !(fc <= fx + 1e-12 * fx.abs()) {
            break;
        }
        let moved = step.amax();
        theta = cand;
        fx = fc;
        if moved < 1e-10 {
            break;
        }
    }
    theta
}

/// REML fit on a prepared design.
pub fn fit_reml(d: &Design, opts: FitOptions) -> Result<StaticFitResult> {
    let (n, p) = (d.n(), d.p());
    if n <= p {
        return Err(Error::invalid(format!("{n} observations for {p} fixed effects")));
    }
    if opts.include_nft_re && d.nft_levels.len() < 2 {
        return Err(Error::invalid("the NFT random intercept needs at least 2 NFTs"));
    }
    if opts.include_collection_re && d.coll_levels.len() < 2 {
        return Err(Error::invalid("the collection random intercept needs at least 2 collections"));
    }
    let cp = CrossProducts::new(d);
    let mut counts = vec![0usize; d.nft_levels.len()];
    for &j in &d.nft {
        counts[j] += 1;
    }
    let nft_identified = counts.iter().any(|&c| c > 1);
    if opts.include_nft_re && !nft_identified {
        warn!("every NFT has one observation; NFT variance is not identified and is fixed at 0");
    }
    let free = [opts.include_nft_re && nft_identified, opts.include_collection_re];

    let mut dev = |t: [f64; 2]| -> f64 {
        let t = [if free[0] { t[0].abs() } else { 0.0 }, if free[1] { t[1].abs() } else { 0.0 }];
        evaluate(d, &cp, t).map(|e| e.deviance(n, p)).unwrap_or(f64::INFINITY)
    };
    let free_idx: Vec<usize> = (0..2).filter(|&k| free[k]).collect();
    let (mut theta, iterations, converged) = if free_idx.is_empty() {
        ([0.0, 0.0], 0, true)
    } else {
        let mut g = |x: &[f64]| {
            let mut t = [0.0; 2];
            for (a, &k) in free_idx.iter().enumerate() {
                t[k] = x[a];
            }
            dev(t)
        };
        let x0 = vec![1.0; free_idx.len()];
        let m = optim::nelder_mead(&mut g, &x0, 0.5, 1e-10, 1e-8, opts.max_iter);
        let mut t = [0.0; 2];
        for (a, &k) in free_idx.iter().enumerate() {
            t[k] = m.x[a].abs();
        }
        (t, m.iterations, m.converged)
    };
    theta = polish(&mut dev, theta, free);
    // snap components that sit on the zero boundary
    let mut boundary = [false; 2];
    for k in 0..2 {
        if !free[k] {
            boundary[k] = opts.include_nft_re && k == 0;
            continue;
        }
        if theta[k] < 1e-4 {
            let mut t0 = theta;
            t0[k] = 0.0;
            if dev(t0) <= dev(theta) + 1e-8 {
                theta = t0;
                boundary[k] = true;
            }
        }
    }
    let e = evaluate(d, &cp, theta)?;
    let s2 = e.sigma2(n, p);
    let beta: Vec<f64> = e.beta.iter().copied().collect();
    let se: Vec<f64> = (0..p).map(|k| (s2 * e.beta_cov_unscaled[(k, k)]).sqrt()).collect();
    let z: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p_value = z.iter().map(|z| two_sided_p(*z)).collect();
    Ok(StaticFitResult {
        names: d.names.clone(),
        beta,
        se,
        z,
        p_value,
        sigma2_nft: s2 * theta[0] * theta[0],
        sigma2_coll: s2 * theta[1] * theta[1],
        sigma2_resid: s2,
        loglik: e.loglik_at(n, p, s2),
        converged,
        n_obs: n,
        n_nft_groups: d.nft_levels.len(),
        n_collections: d.coll_levels.len(),
        boundary_nft: boundary[0],
        boundary_coll: boundary[1],
        nft_identified,
        iterations,
        dropped: Vec::new(),
    })
}

/// Standardises (optionally), builds the design and fits, walking the retry
/// ladder when a fit fails or does not converge.
pub fn fit_static(table: &ObservationTable, spec: &StaticSpec) -> Result<StaticFitResult> {
    let table = if spec.standardize { crate::ingest::zscore(table).0 } else { table.clone() };
    let opts = FitOptions {
        include_nft_re: spec.include_nft_re,
        include_collection_re: spec.include_collection_re,
        max_iter: spec.max_iter,
    };
    let base: Vec<String> = spec.fixed_columns.clone().unwrap_or_else(|| table.regressor_names.clone());
    let base: Vec<String> = base.into_iter().filter(|c| table.column_index(c).is_some()).collect();
    let mut dropped: Vec<String> = Vec::new();
    let mut last_err = None;
    for step in 0..=spec.retry_ladder.len() {
        if step > 0 {
            let group = &spec.retry_ladder[step - 1];
            let newly: Vec<String> = base
                .iter()
                .filter(|c| !dropped.contains(c) && group.iter().any(|g| matches_pattern(c, g)))
                .cloned()
                .collect();
            if newly.is_empty() {
                continue;
            }
            warn!("static fit retry {step}: dropping {}", newly.join(", "));
            dropped.extend(newly);
        }
        let cols: Vec<String> = base.iter().filter(|c| !dropped.contains(c)).cloned().collect();
        let s = StaticSpec { fixed_columns: Some(cols), ..spec.clone() };
        let attempt = build_design(&table, &s).and_then(|d| fit_reml(&d, opts));
        match attempt {
            Ok(mut r) if r.converged => {
                r.dropped = dropped;
                return Ok(r);
            }
            Ok(r) => {
                warn!("static fit did not converge after {} iterations", r.iterations);
                last_err = Some(Ok(r));
            }
            Err(e) => {
                warn!("static fit failed: {e}");
                last_err = Some(Err(e));
            }
        }
    }
    match last_err {
        Some(Ok(mut r)) => {
            r.dropped = dropped;
            Ok(r)
        }
        Some(Err(e)) => Err(e),
        None => Err(Error::Numerical("static fit was never attempted".into())),
    }
}

pub const FIT_COLUMNS: [&str; 7] = ["variable", "coef", "se", "z", "p", "ci_low", "ci_high"];

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

impl StaticFitResult {
    /// Coefficient table, a blank line, then a `component,value` block.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::invalid(e.to_string());
        w.write_record(FIT_COLUMNS).map_err(io)?;
        for k in 0..self.names.len() {
            let (lo, hi) = self.ci(k);
            w.write_record([
                self.names[k].clone(),
                self.beta[k].to_string(),
                self.se[k].to_string(),
                self.z[k].to_string(),
                self.p_value[k].to_string(),
                lo.to_string(),
                hi.to_string(),
            ])
            .map_err(io)?;
        }
        let mut out = String::from_utf8(w.into_inner().map_err(|e| Error::invalid(e.to_string()))?)
            .map_err(|e| Error::invalid(e.to_string()))?;
        out.push('\n');
        let icc = self.icc().map(|v| v.to_string()).unwrap_or_else(|_| "NaN".into());
        let footer = [
            ("sigma2_nft", self.sigma2_nft.to_string()),
            ("sigma2_coll", self.sigma2_coll.to_string()),
            ("sigma2_resid", self.sigma2_resid.to_string()),
            ("icc", icc),
            ("loglik_reml", self.loglik.to_string()),
            ("converged", flag(self.converged).into()),
            ("n_obs", self.n_obs.to_string()),
            ("n_nft_groups", self.n_nft_groups.to_string()),
            ("n_collections", self.n_collections.to_string()),
            ("boundary_nft", flag(self.boundary_nft).into()),
            ("boundary_coll", flag(self.boundary_coll).into()),
            ("nft_identified", flag(self.nft_identified).into()),
            ("iterations", self.iterations.to_string()),
        ];
        out.push_str("component,value\n");
        for (k, v) in footer {
            let _ = writeln!(out, "{k},{v}");
        }
        if !self.dropped.is_empty() {
            let _ = writeln!(out, "dropped,{}", self.dropped.join(";"));
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn parse_csv(text: &str, file: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { file: file.to_string(), line, message };
        let lines: Vec<&str> = text.lines().collect();
        let blank = lines.iter().position(|l| l.trim().is_empty()).unwrap_or(lines.len());
        let header: Vec<&str> = lines.first().map(|l| l.split(',').collect()).unwrap_or_default();
        if header != FIT_COLUMNS {
            return Err(perr(1, format!("expected header {}", FIT_COLUMNS.join(","))));
        }
        let mut r = StaticFitResult {
            names: vec![],
            beta: vec![],
            se: vec![],
            z: vec![],
            p_value: vec![],
            sigma2_nft: f64::NAN,
            sigma2_coll: f64::NAN,
            sigma2_resid: f64::NAN,
            loglik: f64::NAN,
            converged: false,
            n_obs: 0,
            n_nft_groups: 0,
            n_collections: 0,
            boundary_nft: false,
            boundary_coll: false,
            nft_identified: true,
            iterations: 0,
            dropped: vec![],
        };
        let body = lines[1..blank].join("\n");
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_bytes());
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| perr(line, e.to_string()))?;
            if rec.len() != FIT_COLUMNS.len() {
                return Err(perr(line, format!("expected {} fields", FIT_COLUMNS.len())));
            }
            let num = |k: usize| rec[k].trim().parse::<f64>().map_err(|_| perr(line, format!("bad number {:?}", &rec[k])));
            r.names.push(rec[0].to_string());
            r.beta.push(num(1)?);
            r.se.push(num(2)?);
            r.z.push(num(3)?);
            r.p_value.push(num(4)?);
        }
        for (off, l) in lines.iter().enumerate().skip(blank + 1) {
            let line = off + 1;
            let Some((k, v)) = l.split_once(',') else { continue };
            let num = || v.trim().parse::<f64>().map_err(|_| perr(line, format!("bad value {v:?} for {k}")));
            match k {
                "sigma2_nft" => r.sigma2_nft = num()?,
                "sigma2_coll" => r.sigma2_coll = num()?,
                "sigma2_resid" => r.sigma2_resid = num()?,
                "loglik_reml" => r.loglik = num()?,
                "converged" => r.converged = num()? != 0.0,
                "n_obs" => r.n_obs = num()? as usize,
                "n_nft_groups" => r.n_nft_groups = num()? as usize,
                "n_collections" => r.n_collections = num()? as usize,
                "boundary_nft" => r.boundary_nft = num()? != 0.0,
                "boundary_coll" => r.boundary_coll = num()? != 0.0,
                "nft_identified" => r.nft_identified = num()? != 0.0,
                "iterations" => r.iterations = num()? as usize,
                "dropped" => r.dropped = v.split(';').map(str::to_string).collect(),
                _ => {}
            }
        }
        Ok(r)
    }
}

/// Names eligible for multiple-testing adjustment: everything except the
/// intercept and month dummies.
pub fn default_bh_family(result: &StaticFitResult) -> Vec<String> {
    result.names.iter().filter(|n| n.as_str() != INTERCEPT && !n.starts_with(MONTH_PREFIX)).cloned().collect()
}
