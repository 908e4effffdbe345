//! Three-stage feature reduction: variance/redundancy screen, time-blocked
//! Lasso stability, random-forest permutation importance, then a blended
//! score with a family-quota gate.

pub mod forest;
pub mod lasso;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{derive_seed, map_indexed, Exec};
pub use crate::imgfeat::{Family, QuotaGroup};
use crate::ingest::ObservationTable;
use crate::stats::{pearson, pop_var, sample_sd};
use crate::{Error, Result};

pub use forest::{ForestParams, RandomForest};
pub use lasso::{lambda_max, lasso_fit, lasso_objective, Standardizer};

/// Minimum validation rows for each time-series CV fold.
const MIN_FOLD_ROWS: usize = 5;
/// Minimum validation rows for the permutation-importance slice.
pub const MIN_VALIDATION_ROWS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamilyQuota {
    pub minimums: BTreeMap<QuotaGroup, usize>,
    pub cap_total: usize,
    pub stability_gate: f64,
    pub relaxation_step: f64,
    pub relaxation_floor: f64,
}

impl Default for FamilyQuota {
    fn default() -> Self {
        Self {
            minimums: [(QuotaGroup::Handcrafted, 4), (QuotaGroup::Cnn, 6), (QuotaGroup::Style, 3)].into(),
            cap_total: 20,
            stability_gate: 0.60,
            relaxation_step: 0.05,
            relaxation_floor: 0.30,
        }
    }
}

impl FamilyQuota {
    pub fn validate(&self) -> Result<()> {
        let total: usize = self.minimums.values().sum();
        if total > self.cap_total {
            return Err(Error::Config(format!("family minimums sum to {total} > cap {}", self.cap_total)));
        }
        if self.relaxation_step <= 0.0 || self.relaxation_floor > self.stability_gate {
            return Err(Error::Config("relaxation step must be positive and floor <= gate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub seed: u64,
    pub variance_threshold: f64,
    pub corr_threshold: f64,
    pub n_runs: usize,
    pub k_folds: usize,
    pub n_lambdas: usize,
    pub lambda_ratio: f64,
    pub train_fraction: f64,
    pub forest: ForestParams,
    pub n_repeats: usize,
    pub quota: FamilyQuota,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variance_threshold: 1e-4,
            corr_threshold: 0.95,
            n_runs: 8,
            k_folds: 5,
            n_lambdas: 50,
            lambda_ratio: 1e-3,
            train_fraction: 0.8,
            forest: ForestParams::default(),
            n_repeats: 10,
            quota: FamilyQuota::default(),
        }
    }
}

impl SelectConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.quota.validate()?;
        if c.n_runs < 2 || c.k_folds < 2 || c.n_lambdas < 2 {
            return Err(Error::Config("n_runs, k_folds and n_lambdas must be at least 2".into()));
        }
        Ok(c)
    }
}

/// Candidate features with the target and trade dates.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionData {
    pub names: Vec<String>,
    pub families: Vec<Family>,
    /// `columns[j][i]`: feature `j` of row `i`; NaN marks a missing value.
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub dates: Vec<NaiveDate>,
}

impl SelectionData {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>, dates: Vec<NaiveDate>) -> Result<Self> {
        let families = names
            .iter()
            .map(|n| Family::of(n).ok_or_else(|| Error::invalid(format!("{n} has no feature family prefix"))))
            .collect::<Result<Vec<_>>>()?;
        if columns.len() != names.len() || columns.iter().any(|c| c.len() != y.len()) || dates.len() != y.len() {
            return Err(Error::invalid("selection data dimensions disagree"));
        }
        Ok(Self { names, families, columns, y, dates })
    }

    /// Image-feature columns of an observation table (controls are skipped).
    pub fn from_observations(table: &ObservationTable) -> Result<Self> {
        let keep: Vec<usize> =
            (0..table.regressor_names.len()).filter(|&j| Family::of(&table.regressor_names[j]).is_some()).collect();
        let names = keep.iter().map(|&j| table.regressor_names[j].clone()).collect();
        let columns = keep.iter().map(|&j| table.column(j)).collect();
        let y = table.rows.iter().map(|r| r.y).collect();
        let dates = table.rows.iter().map(|r| r.date).collect();
        Self::new(names, columns, y, dates)
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Subset of feature columns, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            names: keep.iter().map(|&j| self.names[j].clone()).collect(),
            families: keep.iter().map(|&j| self.families[j]).collect(),
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            y: self.y.clone(),
            dates: self.dates.clone(),
        }
    }

    /// Row indices in date order (stable on ties).
    pub fn date_order(&self) -> Vec<usize> {
        let mut o: Vec<usize> = (0..self.y.len()).collect();
        o.sort_by_key(|&i| self.dates[i]);
        o
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneEntry {
    pub feature: String,
    pub reason: String,
    pub partner: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenResult {
    pub survivors: Vec<usize>,
    pub pruned: Vec<PruneEntry>,
}

fn finite_pairs(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    a.iter().zip(b).filter(|(x, y)| x.is_finite() && y.is_finite()).map(|(x, y)| (*x, *y)).unzip()
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (x, y) = finite_pairs(a, b);
    if x.len() < 2 {
        return f64::NAN;
    }
    pearson(&x, &y)
}

/// Stage 1: drop near-constant columns, then within each quota group prune
/// one of every pair with `|r| > corr_threshold`, keeping the member more
/// correlated with `y`.
pub fn stage1_screen(data: &SelectionData, variance_threshold: f64, corr_threshold: f64) -> Result<ScreenResult> {
    if data.names.is_empty() || data.n_rows() == 0 {
        return Err(Error::invalid("stage 1: empty feature frame"));
    }
    let mut pruned = Vec::new();
    let mut alive = Vec::new();
    for (j, col) in data.columns.iter().enumerate() {
        let finite: Vec<f64> = col.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.len() < 2 || pop_var(&finite) < variance_threshold {
            pruned.push(PruneEntry { feature: data.names[j].clone(), reason: "low_variance".into(), partner: None });
        } else {
            alive.push(j);
        }
    }
    let ycorr: Vec<f64> = data.columns.iter().map(|c| corr(c, &data.y).abs()).collect();
    let mut pairs = Vec::new();
    for (a, &i) in alive.iter().enumerate() {
        for &j in &alive[a + 1..] {
            if data.families[i].group() != data.families[j].group() {
                continue;
            }
            let r = corr(&data.columns[i], &data.columns[j]);
            if r.abs() > corr_threshold {
                pairs.push((r.abs(), i, j));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| data.names[a.1].cmp(&data.names[b.1]))
            .then_with(|| data.names[a.2].cmp(&data.names[b.2]))
    });
    let mut dropped = vec![false; data.names.len()];
    for (_, i, j) in pairs {
        if dropped[i] || dropped[j] {
            continue;
        }
        let (ci, cj) = (ycorr[i].max(0.0), ycorr[j].max(0.0));
        let keep_i = ci > cj || (ci == cj && data.names[i] < data.names[j]);
        let (keep, drop) = if keep_i { (i, j) } else { (j, i) };
        dropped[drop] = true;
        pruned.push(PruneEntry {
            feature: data.names[drop].clone(),
            reason: "correlated".into(),
            partner: Some(data.names[keep].clone()),
        });
    }
    let survivors = alive.into_iter().filter(|&j| !dropped[j]).collect();
    Ok(ScreenResult { survivors, pruned })
}

/// Moves a split point forward past tied dates so the two sides never share a day.
fn snap(dates: &[NaiveDate], order: &[usize], mut k: usize) -> usize {
    while k > 0 && k < order.len() && dates[order[k]] == dates[order[k - 1]] {
        k += 1;
    }
    k
}

/// Expanding-window time-series folds over `0..m` as (train_end, test_end) pairs.
fn ts_folds(m: usize, k: usize) -> Vec<(usize, usize)> {
    let test = m / (k + 1);
    (0..k).map(|i| (m - (k - i) * test, m - (k - i - 1) * test)).collect()
}

/// A train/validation boundary used during fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRecord {
    pub stage: u8,
    pub block: usize,
    pub train_last: NaiveDate,
    pub valid_first: NaiveDate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFit {
    pub lambda: f64,
    pub folds_used: usize,
    pub coefficients: Vec<f64>,
    pub splits: Vec<SplitRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityResult {
    pub stability: Vec<f64>,
    pub mean_abs_coef: Vec<f64>,
    pub n_runs: usize,
    pub blocks: Vec<BlockFit>,
}

fn fit_block(data: &SelectionData, rows: &[usize], block: usize, cfg: &SelectConfig) -> Result<BlockFit> {
    let len = rows.len();
    let train_end = snap(&data.dates, rows, ((len as f64) * cfg.train_fraction).round() as usize).min(len);
    let train = &rows[..train_end];
    let m = train.len();
    let mut k = cfg.k_folds;
    while k >= 2 && m / (k + 1) < MIN_FOLD_ROWS {
        k -= 1;
    }
    if k < 2 {
        return Err(Error::invalid(format!("block {block} has {len} rows, too few for 2-fold time-series CV")));
    }
    if k < cfg.k_folds {
        info!("stage 2 block {block}: reduced CV folds from {} to {k}", cfg.k_folds);
    }
    let full = Standardizer::fit(&data.columns, &data.y, train);
    let xs = full.design(&data.columns, train);
    let yc = full.centered_y(&data.y, train);
    let lmax = lambda_max(&xs, &yc);
    let p = data.columns.len();
    if lmax <= 0.0 {
        return Ok(BlockFit { lambda: 0.0, folds_used: k, coefficients: vec![0.0; p], splits: Vec::new() });
    }
    let grid: Vec<f64> = (0..cfg.n_lambdas)
        .map(|i| lmax * cfg.lambda_ratio.powf(i as f64 / (cfg.n_lambdas - 1) as f64))
        .collect();
    let mut cv_mse = vec![0.0; grid.len()];
    let mut splits = Vec::new();
    let mut n_folds = 0;
    for (a, b) in ts_folds(m, k) {
        let a = snap(&data.dates, train, a);
        let b = snap(&data.dates, train, b).min(m);
        if a == 0 || a >= b {
            continue;
        }
        let (fit_rows, val_rows) = (&train[..a], &train[a..b]);
        splits.push(SplitRecord {
            stage: 2,
            block,
            train_last: data.dates[fit_rows[a - 1]],
            valid_first: data.dates[val_rows[0]],
        });
        let st = Standardizer::fit(&data.columns, &data.y, fit_rows);
        let xf = st.design(&data.columns, fit_rows);
        let yf = st.centered_y(&data.y, fit_rows);
        let xv = st.design(&data.columns, val_rows);
        let yv = st.centered_y(&data.y, val_rows);
        let mut beta = vec![0.0; p];
        for (g, &lam) in grid.iter().enumerate() {
            beta = lasso::lasso_warm(&xf, &yf, lam, beta);
            let pred = &xv * nalgebra::DVector::from_column_slice(&beta);
            cv_mse[g] += forest::mse(pred.as_slice(), &yv);
        }
        n_folds += 1;
    }
    if n_folds == 0 {
        return Err(Error::invalid(format!("block {block}: no usable CV folds (dates too coarse)")));
    }
    let best = (0..grid.len()).fold(0, |b, g| if cv_mse[g] < cv_mse[b] { g } else { b });
    let lambda = grid[best];
    let mut beta = vec![0.0; p];
    for &lam in &grid[..=best] {
        beta = lasso::lasso_warm(&xs, &yc, lam, beta);
    }
    Ok(BlockFit { lambda, folds_used: k, coefficients: beta, splits })
}

/// Stage 2: Lasso selection frequency over contiguous date blocks.
pub fn stage2_stability(data: &SelectionData, cfg: &SelectConfig, exec: Exec) -> Result<StabilityResult> {
    if cfg.n_runs < 2 {
        return Err(Error::invalid("stage 2 needs at least 2 runs"));
    }
    let order = data.date_order();
    let n = order.len();
    let size = n / cfg.n_runs;
    if size == 0 {
        return Err(Error::invalid(format!("{n} rows cannot form {} blocks", cfg.n_runs)));
    }
    let blocks = map_indexed(exec, cfg.n_runs, |r| {
        let end = if r + 1 == cfg.n_runs { n } else { (r + 1) * size };
        fit_block(data, &order[r * size..end], r, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let p = data.columns.len();
    let mut stability = vec![0.0; p];
    let mut mean_abs_coef = vec![0.0; p];
    for j in 0..p {
        let hits: Vec<f64> =
            blocks.iter().map(|b| b.coefficients[j]).filter(|c| *c != 0.0).map(f64::abs).collect();
        stability[j] = hits.len() as f64 / cfg.n_runs as f64;
        mean_abs_coef[j] = if hits.is_empty() { 0.0 } else { hits.iter().sum::<f64>() / hits.len() as f64 };
    }
    Ok(StabilityResult { stability, mean_abs_coef, n_runs: cfg.n_runs, blocks })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiStats {
    pub mean: f64,
    pub sd: f64,
    pub low: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult {
    pub pi: Vec<PiStats>,
    pub baseline_mse: f64,
    pub split: SplitRecord,
    /// Features the forest split on at least once.
    pub used_features: Vec<usize>,
}

/// Stage 3: one forest on the first `train_fraction` of rows by date and
/// repeated permutation importance on the rest.
pub fn stage3_permutation(data: &SelectionData, cfg: &SelectConfig, exec: Exec) -> Result<PermutationResult> {
    let order = data.date_order();
    let n = order.len();
    let cut = snap(&data.dates, &order, ((n as f64) * cfg.train_fraction).round() as usize).min(n);
    let (train, valid) = order.split_at(cut);
    if valid.len() < MIN_VALIDATION_ROWS {
        return Err(Error::invalid(format!(
            "stage 3 validation slice has {} rows, need at least {MIN_VALIDATION_ROWS}",
            valid.len()
        )));
    }
    if train.is_empty() {
        return Err(Error::invalid("stage 3 training slice is empty"));
    }
    let st = Standardizer::fit(&data.columns, &data.y, train);
    let raw = |rows: &[usize]| {
        nalgebra::DMatrix::from_fn(rows.len(), data.columns.len(), |r, j| {
            let v = data.columns[j][rows[r]];
            if v.is_finite() {
                v
            } else {
                st.medians[j]
            }
        })
    };
    let xt = raw(train);
    let yt: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
    let xv = raw(valid);
    let yv: Vec<f64> = valid.iter().map(|&i| data.y[i]).collect();
    let seed = derive_seed(cfg.seed, 3);
    let rf = RandomForest::fit(&xt, &yt, &cfg.forest, seed, exec);
    let baseline = forest::mse(&rf.predict(&xv), &yv);
    let p = data.columns.len();
    let per_repeat: Vec<Vec<f64>> = map_indexed(exec, cfg.n_repeats, |r| {
        let rs = derive_seed(seed, 1000 + r as u64);
        (0..p)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rs, j as u64));
                let mut perm: Vec<usize> = (0..valid.len()).collect();
                perm.shuffle(&mut rng);
                let mut xp = xv.clone();
                for (i, &pi) in perm.iter().enumerate() {
                    xp[(i, j)] = xv[(pi, j)];
                }
                forest::mse(&rf.predict(&xp), &yv) - baseline
            })
            .collect()
    });
    let pi = (0..p)
        .map(|j| {
            let vals: Vec<f64> = per_repeat.iter().map(|r| r[j]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = if vals.len() > 1 { sample_sd(&vals) } else { 0.0 };
            PiStats { mean, sd, low: mean - 1.96 * sd }
        })
        .collect();
    Ok(PermutationResult {
        pi,
        baseline_mse: baseline,
        split: SplitRecord {
            stage: 3,
            block: 0,
            train_last: data.dates[train[train.len() - 1]],
            valid_first: data.dates[valid[0]],
        },
        used_features: rf.split_features(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateReason {
    HighConfidence,
    FamilyFill,
    ScoreFill,
    Rejected,
}

impl GateReason {
    pub fn as_str(self) -> &'static str {
        match self {
            GateReason::HighConfidence => "high_confidence",
            GateReason::FamilyFill => "family_fill",
            GateReason::ScoreFill => "score_fill",
            GateReason::Rejected => "rejected",
        }
    }
}

impl fmt::Display for GateReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateReason {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high_confidence" => Ok(GateReason::HighConfidence),
            "family_fill" => Ok(GateReason::FamilyFill),
            "score_fill" => Ok(GateReason::ScoreFill),
            "rejected" => Ok(GateReason::Rejected),
            _ => Err(Error::invalid(format!("unknown gate reason {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub feature: String,
    pub family: Family,
    pub stability: f64,
    pub mean_abs_coef: f64,
    pub pi_mean: f64,
    pub pi_sd: f64,
    pub pi_low: f64,
    pub pi_normalized: f64,
    pub blended_score: f64,
    pub selected: bool,
    pub gate_reason: GateReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionReport {
    pub rows: Vec<SelectionRow>,
    /// Quota groups whose minimum could not be met, with the shortfall.
    pub shortfalls: Vec<(QuotaGroup, usize)>,
}

pub fn blend(stability: f64, pi_normalized: f64) -> f64 {
    0.60 * stability + 0.40 * pi_normalized
}

/// Min-max scaling; all-equal (or empty) inputs map to 0.5.
pub fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Blends the two stages and applies the gate.
///
/// Order of admission: each quota group first takes up to its minimum
/// (high-confidence members, then members passing a stability gate relaxed
/// in steps down to the floor, then the best remaining); then the other
/// high-confidence features; then the best remaining scores up to the cap.
/// Ranking everywhere is blended score, then stability, then name.
pub fn blend_and_gate(
    names: &[String],
    families: &[Family],
    stability: &[f64],
    mean_abs_coef: &[f64],
    pi: &[PiStats],
    quota: &FamilyQuota,
) -> SelectionReport {
    let p = names.len();
    let pi_means: Vec<f64> = pi.iter().map(|s| s.mean).collect();
    let pn = min_max(&pi_means);
    let mut rows: Vec<SelectionRow> = (0..p)
        .map(|j| SelectionRow {
            feature: names[j].clone(),
            family: families[j],
            stability: stability[j],
            mean_abs_coef: mean_abs_coef[j],
            pi_mean: pi[j].mean,
            pi_sd: pi[j].sd,
            pi_low: pi[j].low,
            pi_normalized: pn[j],
            blended_score: blend(stability[j], pn[j]),
            selected: false,
            gate_reason: GateReason::Rejected,
        })
        .collect();
    let mut rank: Vec<usize> = (0..p).collect();
    rank.sort_by(|&a, &b| {
        rows[b]
            .blended_score
            .total_cmp(&rows[a].blended_score)
            .then(rows[b].stability.total_cmp(&rows[a].stability))
            .then(rows[a].feature.cmp(&rows[b].feature))
    });
    let high = |r: &SelectionRow| r.stability >= quota.stability_gate && r.pi_low > 0.0;
    let mut count = 0usize;
    let mut shortfalls = Vec::new();
    for (&group, &minimum) in &quota.minimums {
        let members: Vec<usize> = rank.iter().copied().filter(|&j| families[j].group() == group).collect();
        let mut taken = 0;
        let mut admit = |rows: &mut Vec<SelectionRow>, j: usize, reason: GateReason, taken: &mut usize| {
            if *taken < minimum && !rows[j].selected && count < quota.cap_total {
                rows[j].selected = true;
                rows[j].gate_reason = reason;
                *taken += 1;
                count += 1;
            }
        };
        for &j in &members {
            if high(&rows[j]) {
                admit(&mut rows, j, GateReason::HighConfidence, &mut taken);
            }
        }
        let mut gate = quota.stability_gate - quota.relaxation_step;
        while taken < minimum && gate >= quota.relaxation_floor - 1e-12 {
            for &j in &members {
                if rows[j].stability >= gate - 1e-12 {
                    admit(&mut rows, j, GateReason::FamilyFill, &mut taken);
                }
            }
            gate -= quota.relaxation_step;
        }
        for &j in &members {
            admit(&mut rows, j, GateReason::FamilyFill, &mut taken);
        }
        if taken < minimum {
            warn!("quota group {} short by {} (only {} available)", group.as_str(), minimum - taken, members.len());
            shortfalls.push((group, minimum - taken));
        }
    }
    for &j in &rank {
        if count < quota.cap_total && !rows[j].selected && high(&rows[j]) {
            rows[j].selected = true;
            rows[j].gate_reason = GateReason::HighConfidence;
            count += 1;
        }
    }
    for &j in &rank {
        if count < quota.cap_total && !rows[j].selected {
            rows[j].selected = true;
            rows[j].gate_reason = GateReason::ScoreFill;
            count += 1;
        }
    }
    SelectionReport { rows, shortfalls }
}

/// Everything produced by a selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub report: SelectionReport,
    pub screen: ScreenResult,
    pub stability: StabilityResult,
    pub permutation: PermutationResult,
}

impl SelectionOutcome {
    pub fn selected(&self) -> Vec<String> {
        self.report.rows.iter().filter(|r| r.selected).map(|r| r.feature.clone()).collect()
    }
}

/// Stages 1–3 and the gate.
pub fn run_selection(data: &SelectionData, cfg: &SelectConfig, exec: Exec) -> Result<SelectionOutcome> {
    cfg.quota.validate()?;
    let screen = stage1_screen(data, cfg.variance_threshold, cfg.corr_threshold)?;
    info!("stage 1: {} of {} features survive", screen.survivors.len(), data.names.len());
    if screen.survivors.is_empty() {
        let empty = StabilityResult { stability: vec![], mean_abs_coef: vec![], n_runs: cfg.n_runs, blocks: vec![] };
        let split = SplitRecord { stage: 3, block: 0, train_last: data.dates[0], valid_first: data.dates[0] };
        return Ok(SelectionOutcome {
            report: SelectionReport::default(),
            screen,
            stability: empty,
            permutation: PermutationResult { pi: vec![], baseline_mse: f64::NAN, split, used_features: vec![] },
        });
    }
    let sub = data.subset(&screen.survivors);
    let stability = stage2_stability(&sub, cfg, exec)?;
    let permutation = stage3_permutation(&sub, cfg, exec)?;
    let report = blend_and_gate(
        &sub.names,
        &sub.families,
        &stability.stability,
        &stability.mean_abs_coef,
        &permutation.pi,
        &cfg.quota,
    );
    Ok(SelectionOutcome { report, screen, stability, permutation })
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "feature",
    "family",
    "stability",
    "mean_abs_coef",
    "pi_mean",
    "pi_sd",
    "pi_low",
    "pi_normalized",
    "blended_score",
    "selected",
    "gate_reason",
];

impl SelectionReport {
    pub fn selected(&self) -> Vec<String> {
        self.rows.iter().filter(|r| r.selected).map(|r| r.feature.clone()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(REPORT_COLUMNS).map_err(|e| Error::csv(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.feature.clone(),
                r.family.as_str().to_string(),
                r.stability.to_string(),
                r.mean_abs_coef.to_string(),
                r.pi_mean.to_string(),
                r.pi_sd.to_string(),
                r.pi_low.to_string(),
                r.pi_normalized.to_string(),
                r.blended_score.to_string(),
                r.selected.to_string(),
                r.gate_reason.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let idx: Vec<usize> =
            REPORT_COLUMNS.iter().map(|c| crate::ingest::column(&headers, c, &file)).collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let bad = |c: usize| Error::Parse {
                file: file.clone(),
                line: i + 2,
                message: format!("bad value {:?} in column {}", &rec[idx[c]], REPORT_COLUMNS[c]),
            };
            let num = |c: usize| rec[idx[c]].trim().parse::<f64>().map_err(|_| bad(c));
            let feature = rec[idx[0]].to_string();
            rows.push(SelectionRow {
                family: Family::of(&feature).ok_or_else(|| bad(0))?,
                feature,
                stability: num(2)?,
                mean_abs_coef: num(3)?,
                pi_mean: num(4)?,
                pi_sd: num(5)?,
                pi_low: num(6)?,
                pi_normalized: num(7)?,
                blended_score: num(8)?,
                selected: rec[idx[9]].trim().parse().map_err(|_| bad(9))?,
                gate_reason: rec[idx[10]].trim().parse().map_err(|_| bad(10))?,
            });
        }
        Ok(Self { rows, shortfalls: Vec::new() })
    }
}

pub fn write_prune_log(entries: &[PruneEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["feature", "reason", "kept_instead"]).map_err(|e| Error::csv(path, e))?;
    for e in entries {
        w.write_record([e.feature.as_str(), e.reason.as_str(), e.partner.as_deref().unwrap_or("")])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn days(n: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        (0..n).map(|i| d0 + chrono::Days::new(i as u64)).collect()
    }

    #[test]
    fn blend_endpoints() {
        assert_eq!(blend(1.0, 1.0), 1.0);
        assert!((blend(0.5, 0.0) - 0.30).abs() < 1e-15);
    }

    #[test]
    fn min_max_degenerate() {
        assert_eq!(min_max(&[2.0, 2.0]), vec![0.5, 0.5]);
        assert_eq!(min_max(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn screen_prunes_within_group_only() {
        let n = 50;
        let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let a: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.01 * (i % 3) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = a.clone();
        let constant = vec![3.0; n];
        let data = SelectionData::new(
            vec!["EDGE_A".into(), "COLOR_B".into(), "CNN_PCA_1".into(), "TEXTURE_C".into()],
            vec![a, b, c, constant],
            y,
            days(n),
        )
        .unwrap();
        let s = stage1_screen(&data, 1e-4, 0.95).unwrap();
        // EDGE_A and COLOR_B tie on |corr(y)|, the lexicographically smaller name stays
        assert_eq!(s.survivors, vec![1, 2]);
        assert_eq!(s.pruned.len(), 2);
    }

    #[test]
    fn folds_expand() {
        assert_eq!(ts_folds(60, 5), vec![(10, 20), (20, 30), (30, 40), (40, 50), (50, 60)]);
    }

    #[test]
    fn gate_respects_minimums_and_cap() {
        let mut names = Vec::new();
        let mut fams = Vec::new();
        for i in 0..10 {
            names.push(format!("EDGE_{i}"));
            fams.push(Family::Edge);
            names.push(format!("CNN_PCA_{i}"));
            fams.push(Family::CnnPca);
            names.push(format!("STYLE_PCA_{i}"));
            fams.push(Family::StylePca);
        }
        let p = names.len();
        let stab: Vec<f64> = (0..p).map(|j| ((j * 7) % 9) as f64 / 8.0).collect();
        let pi: Vec<PiStats> = (0..p)
            .map(|j| {
                let m = ((j * 5) % 11) as f64 / 10.0 - 0.3;
                PiStats { mean: m, sd: 0.05, low: m - 0.098 }
            })
            .collect();
        let r = blend_and_gate(&names, &fams, &stab, &vec![0.0; p], &pi, &FamilyQuota::default());
        let sel: Vec<&SelectionRow> = r.rows.iter().filter(|x| x.selected).collect();
        assert!(sel.len() <= 20);
        for (g, m) in FamilyQuota::default().minimums {
            assert!(sel.iter().filter(|x| x.family.group() == g).count() >= m);
        }
        assert!(r.rows.iter().all(|x| x.selected == (x.gate_reason != GateReason::Rejected)));
    }
}
