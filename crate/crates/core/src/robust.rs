//! Robustness checks: Benjamini–Hochberg adjustment across a coefficient
//! family and the cycle-block percentile bootstrap.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::{derive_seed, map_indexed, Exec};
use crate::stats::quantile_sorted;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tier {
    None,
    Q10,
    Q05,
    Q01,
}

impl Tier {
    pub fn of(q: f64) -> Tier {
        if q <= 0.01 {
            Tier::Q01
        } else if q <= 0.05 {
            Tier::Q05
        } else if q <= 0.10 {
            Tier::Q10
        } else {
            Tier::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::None => "none",
            Tier::Q10 => "q<=0.10",
            Tier::Q05 => "q<=0.05",
            Tier::Q01 => "q<=0.01",
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            Tier::None => "",
            Tier::Q10 => "*",
            Tier::Q05 => "**",
            Tier::Q01 => "***",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BhRow {
    pub name: String,
    pub p_raw: f64,
    pub q_bh: f64,
    pub tier: Tier,
}

/// Benjamini–Hochberg step-up adjustment; rows keep the input order.
pub fn bh_adjust(p_values: &[(String, f64)]) -> Result<Vec<BhRow>> {
    if let Some((n, p)) = p_values.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(format!("p-value {p} for {n} is outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].1.total_cmp(&p_values[b].1).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running: f64 = 1.0;
    for rank in (0..m).rev() {
        let i = order[rank];
        let adj = (p_values[i].1 * (m as f64 / (rank + 1) as f64)).min(1.0);
        running = running.min(adj);
        q[i] = running;
    }
    Ok(p_values
        .iter()
        .zip(q)
        .map(|((name, p), q)| BhRow { name: name.clone(), p_raw: *p, q_bh: q, tier: Tier::of(q) })
        .collect())
}

pub fn write_bh_csv(rows: &[BhRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["variable", "p_raw", "q_bh", "tier"]).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record([r.name.clone(), r.p_raw.to_string(), r.q_bh.to_string(), r.tier.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_bh_csv(path: &Path) -> Result<Vec<BhRow>> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let idx: Vec<usize> = ["variable", "p_raw", "q_bh"]
        .iter()
        .map(|c| crate::ingest::column(&headers, c, &file))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let num = |j: usize| -> Result<f64> {
            rec[idx[j]].trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line: i + 2,
                message: format!("bad number {:?}", &rec[idx[j]]),
            })
        };
        let q = num(2)?;
        out.push(BhRow { name: rec[idx[0]].to_string(), p_raw: num(1)?, q_bh: q, tier: Tier::of(q) });
    }
    Ok(out)
}

/// Mean as first value plus mean offset, so constant input returns that value exactly.
fn anchored_mean(v: &[f64], idx: impl Iterator<Item = usize>) -> f64 {
    let r = v[0];
    let mut s = 0.0;
    let mut n = 0usize;
    for i in idx {
        s += v[i] - r;
        n += 1;
    }
    r + s / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub mean_of_cycle_means: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_positive: usize,
    pub n_cycles: usize,
    pub n_resamples: usize,
}

impl BootstrapResult {
    pub fn share_positive(&self) -> f64 {
        self.n_positive as f64 / self.n_cycles as f64
    }

    pub fn write_csv(&self, path: &Path, seed: u64) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record([
            "mean_of_cycle_means",
            "ci_low",
            "ci_high",
            "share_positive",
            "n_positive",
            "n_cycles",
            "n_resamples",
            "seed",
        ])
        .map_err(|e| Error::csv(path, e))?;
        w.write_record([
            self.mean_of_cycle_means.to_string(),
            self.ci_low.to_string(),
            self.ci_high.to_string(),
            self.share_positive().to_string(),
            self.n_positive.to_string(),
            self.n_cycles.to_string(),
            self.n_resamples.to_string(),
            seed.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let rec = rdr
            .records()
            .next()
            .ok_or_else(|| Error::Parse { file: file.clone(), line: 2, message: "no data row".into() })?
            .map_err(|e| Error::csv(path, e))?;
        let get = |name: &str| -> Result<f64> {
            let j = crate::ingest::column(&headers, name, &file)?;
            rec[j].trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line: 2,
                message: format!("bad number in column {name}"),
            })
        };
        Ok(Self {
            mean_of_cycle_means: get("mean_of_cycle_means")?,
            ci_low: get("ci_low")?,
            ci_high: get("ci_high")?,
            n_positive: get("n_positive")? as usize,
            n_cycles: get("n_cycles")? as usize,
            n_resamples: get("n_resamples")? as usize,
        })
    }
}

/// Fixed shard count so the resample stream does not depend on thread count.
pub const BOOTSTRAP_SHARDS: usize = 64;

/// Percentile bootstrap of the mean over cycles, resampling whole cycles.
///
/// Resamples are split into [`BOOTSTRAP_SHARDS`] shards, shard `s` drawing
/// from a ChaCha8 stream seeded with `derive_seed(seed, s)`.
pub fn cycle_block_bootstrap(cycle_means: &[f64], n_resamples: usize, seed: u64, exec: Exec) -> Result<BootstrapResult> {
    let t = cycle_means.len();
    if t < 2 {
        return Err(Error::invalid("cycle-block bootstrap needs at least 2 cycles"));
    }
    if n_resamples == 0 {
        return Err(Error::invalid("cycle-block bootstrap needs at least one resample"));
    }
    if cycle_means.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cycle means must be finite"));
    }
    let shards = map_indexed(exec, BOOTSTRAP_SHARDS, |s| {
        let lo = s * n_resamples / BOOTSTRAP_SHARDS;
        let hi = (s + 1) * n_resamples / BOOTSTRAP_SHARDS;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
        let mut idx = vec![0usize; t];
        (lo..hi)
            .map(|_| {
                for i in idx.iter_mut() {
                    *i = rng.random_range(0..t);
                }
                anchored_mean(cycle_means, idx.iter().copied())
            })
            .collect::<Vec<f64>>()
    });
    let mut means: Vec<f64> = shards.into_iter().flatten().collect();
    means.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        mean_of_cycle_means: anchored_mean(cycle_means, 0..t),
        ci_low: quantile_sorted(&means, 0.025),
        ci_high: quantile_sorted(&means, 0.975),
        n_positive: cycle_means.iter().filter(|v| **v > 0.0).count(),
        n_cycles: t,
        n_resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(ps: &[f64]) -> Vec<(String, f64)> {
        ps.iter().enumerate().map(|(i, p)| (format!("v{i}"), *p)).collect()
    }

    #[test]
    fn bh_examples() {
        let q: Vec<f64> = bh_adjust(&named(&[0.03])).unwrap().iter().map(|r| r.q_bh).collect();
        assert_eq!(q, vec![0.03]);
        let q: Vec<f64> = bh_adjust(&named(&[0.05, 0.05, 0.05])).unwrap().iter().map(|r| r.q_bh).collect();
        assert_eq!(q, vec![0.05; 3]);
        let q: Vec<f64> = bh_adjust(&named(&[0.02, 0.9, 0.001, 0.01])).unwrap().iter().map(|r| r.q_bh).collect();
        let want = [0.08 / 3.0, 0.9, 0.004, 0.02];
        for (a, b) in q.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(bh_adjust(&named(&[1.2])).is_err());
    }

    #[test]
    fn constant_input_collapses() {
        let r = cycle_block_bootstrap(&[0.1; 10], 1000, 1, Exec::Sequential).unwrap();
        assert_eq!((r.ci_low, r.mean_of_cycle_means, r.ci_high), (0.1, 0.1, 0.1));
    }

    #[test]
    fn modes_agree() {
        let v = [0.3, -0.1, 0.2, 0.0, 0.5];
        let a = cycle_block_bootstrap(&v, 5000, 3, Exec::Sequential).unwrap();
        let b = cycle_block_bootstrap(&v, 5000, 3, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
