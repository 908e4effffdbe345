//! Forward simulation of the static model with crossed NFT and collection
//! intercepts plus calendar-month effects.

use std::collections::BTreeMap;

use chrono::{Datelike, Months, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{month_index, CycleTable, ObservationTable, SaleObservation};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticPanelSpec {
    pub n_collections: usize,
    pub n_nfts: usize,
    /// Inclusive range of trades per NFT.
    pub trades_per_nft: (usize, usize),
    pub intercept: f64,
    /// Regressor name and true coefficient on the z-scored column.
    pub true_beta: Vec<(String, f64)>,
    pub sigma2_nft: f64,
    pub sigma2_coll: f64,
    pub sigma2_resid: f64,
    pub n_months: usize,
    pub month_effect_sd: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SyntheticPanelSpec {
    fn default() -> Self {
        Self {
            n_collections: 20,
            n_nfts: 800,
            trades_per_nft: (4, 9),
            intercept: 6.0,
            true_beta: vec![
                ("X1".into(), 0.152),
                ("X2".into(), -0.473),
                ("X3".into(), 0.390),
                ("X4".into(), 0.0),
                ("X5".into(), 0.25),
                ("X6".into(), -0.1),
            ],
            sigma2_nft: 0.6,
            sigma2_coll: 0.6,
            sigma2_resid: 0.8,
            n_months: 36,
            month_effect_sd: 0.3,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            seed: 20_250_101,
        }
    }
}

impl SyntheticPanelSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.trades_per_nft;
        if self.n_collections == 0 || self.n_nfts == 0 || lo == 0 || lo > hi || self.n_months == 0 {
            return Err(Error::invalid("panel spec counts must be >= 1 and trades_per_nft must be an ordered range"));
        }
        if self.n_nfts < self.n_collections {
            return Err(Error::invalid("panel spec needs at least one NFT per collection"));
        }
        for (name, v) in [
            ("sigma2_nft", self.sigma2_nft),
            ("sigma2_coll", self.sigma2_coll),
            ("sigma2_resid", self.sigma2_resid),
            ("month_effect_sd", self.month_effect_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.true_beta.iter().any(|(_, b)| !b.is_finite()) {
            return Err(Error::invalid("true_beta must be finite"));
        }
        Ok(())
    }
}

/// Everything that went into `y`, so any term can be subtracted back out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    pub intercept: f64,
    pub beta: Vec<(String, f64)>,
    pub sigma2_nft: f64,
    pub sigma2_coll: f64,
    pub sigma2_resid: f64,
    pub u_nft: BTreeMap<String, f64>,
    pub v_coll: BTreeMap<String, f64>,
    /// Indexed by `month_index`.
    pub month_effects: Vec<f64>,
    /// Residual noise, in row order.
    pub noise: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Simulates the panel. Regressors are drawn N(0, 1) and then z-scored with
/// the population SD so the true coefficients apply to the emitted columns
/// exactly. Rows are ordered by NFT, then trade date.
pub fn gen_static_panel(spec: &SyntheticPanelSpec) -> Result<(ObservationTable, PanelTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cycles = CycleTable::reference();
    let colls: Vec<String> = (0..spec.n_collections).map(|c| format!("C{c:03}")).collect();
    let v_coll: BTreeMap<String, f64> =
        colls.iter().map(|c| (c.clone(), spec.sigma2_coll.sqrt() * normal(&mut rng))).collect();
    let month_effects: Vec<f64> = (0..spec.n_months).map(|_| spec.month_effect_sd * normal(&mut rng)).collect();
    let mut u_nft = BTreeMap::new();
    let mut rows = Vec::new();
    for i in 0..spec.n_nfts {
        let nft = format!("N{i:05}");
        let coll = &colls[i % spec.n_collections];
        u_nft.insert(nft.clone(), spec.sigma2_nft.sqrt() * normal(&mut rng));
        let n_trades = rng.random_range(spec.trades_per_nft.0..=spec.trades_per_nft.1);
        let mut dates: Vec<NaiveDate> = (0..n_trades)
            .map(|_| {
                let m = rng.random_range(0..spec.n_months) as u32;
                let first = spec.start.with_day(1).expect("day 1") + Months::new(m);
                let days = (first + Months::new(1)).signed_duration_since(first).num_days();
                first + chrono::Days::new(rng.random_range(0..days) as u64)
            })
            .collect();
        dates.sort();
        for date in dates {
            rows.push(SaleObservation {
                nft_id: nft.clone(),
                collection_code: coll.clone(),
                date,
                y: 0.0,
                month_index: month_index(date, spec.start),
                cycle_index: cycles.cycle_of(date).unwrap_or(1),
                regressors: (0..spec.true_beta.len()).map(|_| normal(&mut rng)).collect(),
            });
        }
    }
    standardize(&mut rows, spec.true_beta.len());
    let sd = spec.sigma2_resid.sqrt();
    let mut noise = Vec::with_capacity(rows.len());
    for r in &mut rows {
        let e = sd * normal(&mut rng);
        let xb: f64 = r.regressors.iter().zip(&spec.true_beta).map(|(x, (_, b))| x * b).sum();
        r.y = spec.intercept
            + xb
            + month_effects[r.month_index as usize]
            + u_nft[&r.nft_id]
            + v_coll[&r.collection_code]
            + e;
        noise.push(e);
    }
    let table = ObservationTable { regressor_names: spec.true_beta.iter().map(|(n, _)| n.clone()).collect(), rows };
    let truth = PanelTruth {
        intercept: spec.intercept,
        beta: spec.true_beta.clone(),
        sigma2_nft: spec.sigma2_nft,
        sigma2_coll: spec.sigma2_coll,
        sigma2_resid: spec.sigma2_resid,
        u_nft,
        v_coll,
        month_effects,
        noise,
    };
    Ok((table, truth))
}

fn standardize(rows: &mut [SaleObservation], p: usize) {
    let n = rows.len() as f64;
    for j in 0..p {
        let m = rows.iter().map(|r| r.regressors[j]).sum::<f64>() / n;
        let sd = (rows.iter().map(|r| (r.regressors[j] - m).powi(2)).sum::<f64>() / n).sqrt();
        for r in rows.iter_mut() {
            r.regressors[j] = if sd > 0.0 { (r.regressors[j] - m) / sd } else { 0.0 };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticPanelSpec {
        SyntheticPanelSpec { n_collections: 4, n_nfts: 40, n_months: 6, ..Default::default() }
    }

    #[test]
    fn noiseless_is_linear() {
        let spec = SyntheticPanelSpec {
            sigma2_nft: 0.0,
            sigma2_coll: 0.0,
            sigma2_resid: 0.0,
            month_effect_sd: 0.0,
            ..small()
        };
        let (t, _) = gen_static_panel(&spec).unwrap();
        for r in &t.rows {
            let xb: f64 = r.regressors.iter().zip(&spec.true_beta).map(|(x, (_, b))| x * b).sum();
            assert_eq!(r.y, spec.intercept + xb);
        }
    }

    #[test]
    fn columns_are_standardized() {
        let (t, _) = gen_static_panel(&small()).unwrap();
        for j in 0..t.regressor_names.len() {
            let c = t.column(j);
            let n = c.len() as f64;
            let m = c.iter().sum::<f64>() / n;
            let v = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_negative_variance() {
        let spec = SyntheticPanelSpec { sigma2_nft: -0.1, ..small() };
        assert!(gen_static_panel(&spec).is_err());
    }
}
