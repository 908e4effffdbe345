use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use log::warn;
use serde::{Deserialize, Serialize};

use super::cycles::CycleTable;
use super::market::{column, ControlSeries, CONTROL_COLUMNS};
use super::transactions::{DropLog, Transaction};
use super::parse_date_or_err;
use crate::imgfeat::FeatureTable;
use crate::stats;
use crate::{Error, Result};

/// Feature columns holding hue angles; they enter models as sin/cos pairs.
pub const ANGLE_COLUMNS: [&str; 2] = ["COLOR_MOST_FREQUENT_HUE", "COLOR_HUE_MEAN"];

#[derive(Debug, Clone, PartialEq)]
pub struct SaleObservation {
    pub nft_id: String,
    pub collection_code: String,
    pub date: NaiveDate,
    /// `ln(1 + price_usd)`.
    pub y: f64,
    /// Calendar months since the start of the study window.
    pub month_index: i32,
    /// 1-based cycle index.
    pub cycle_index: usize,
    pub regressors: Vec<f64>,
}

/// Observation rows sharing one ordered list of regressor names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationTable {
    pub regressor_names: Vec<String>,
    pub rows: Vec<SaleObservation>,
}

impl ObservationTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.regressor_names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.regressors[j]).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Keeps only the named regressors, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<ObservationTable> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::invalid(format!("unknown regressor {n}"))))
            .collect::<Result<_>>()?;
        Ok(ObservationTable {
            regressor_names: names.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| SaleObservation {
                    regressors: idx.iter().map(|&j| r.regressors[j]).collect(),
                    ..r.clone()
                })
                .collect(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["nft_id", "collection_code", "date", "y", "month_index", "cycle_index"];
        header.extend(self.regressor_names.iter().map(String::as_str));
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for r in &self.rows {
            let mut rec = vec![
                r.nft_id.clone(),
                r.collection_code.clone(),
                r.date.to_string(),
                r.y.to_string(),
                r.month_index.to_string(),
                r.cycle_index.to_string(),
            ];
            rec.extend(r.regressors.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let fixed = ["nft_id", "collection_code", "date", "y", "month_index", "cycle_index"];
        let idx: Vec<usize> = fixed.iter().map(|c| column(&headers, c, &file)).collect::<Result<_>>()?;
        let reg_idx: Vec<usize> = (0..headers.len()).filter(|j| !idx.contains(j)).collect();
        let regressor_names = reg_idx.iter().map(|&j| headers[j].to_string()).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = i + 2;
            let num = |j: usize| -> Result<f64> {
                rec[j].trim().parse().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line,
                    message: format!("bad number {:?} in column {}", &rec[j], &headers[j]),
                })
            };
            rows.push(SaleObservation {
                nft_id: rec[idx[0]].to_string(),
                collection_code: rec[idx[1]].to_string(),
                date: parse_date_or_err(&rec[idx[2]], &file, line)?,
                y: num(idx[3])?,
                month_index: num(idx[4])? as i32,
                cycle_index: num(idx[5])? as usize,
                regressors: reg_idx.iter().map(|&j| num(j)).collect::<Result<_>>()?,
            });
        }
        Ok(Self { regressor_names, rows })
    }
}

/// Months since `start`, at calendar-month granularity.
pub fn month_index(date: NaiveDate, start: NaiveDate) -> i32 {
    (date.year() - start.year()) * 12 + date.month() as i32 - start.month() as i32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    Degrees,
    /// Fractions of a full turn in `[0, 1]`.
    Cycles,
}

impl AngleUnit {
    /// Degrees when any finite value in the column exceeds 1 in magnitude.
    pub fn detect(column: &[f64]) -> AngleUnit {
        let max = column.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs()));
        if max > 1.0 {
            AngleUnit::Degrees
        } else {
            AngleUnit::Cycles
        }
    }
}

/// `(sin θ, cos θ)` after converting to radians; `None` for non-finite input.
pub fn encode_hue(theta_raw: f64, unit: AngleUnit) -> Option<(f64, f64)> {
    if !theta_raw.is_finite() {
        return None;
    }
    let rad = match unit {
        AngleUnit::Degrees => theta_raw.rem_euclid(360.0).to_radians(),
        AngleUnit::Cycles => theta_raw * std::f64::consts::TAU,
    };
    Some(rad.sin_cos())
}

/// Encodes a whole column with unit detection on its maximum. NaN rows give NaN pairs.
pub fn encode_hue_column(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let unit = AngleUnit::detect(values);
    values
        .iter()
        .map(|&v| encode_hue(v, unit).unwrap_or((f64::NAN, f64::NAN)))
        .unzip()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameOptions {
    /// Feature columns to carry into the frame; `None` keeps every feature.
    pub feature_columns: Option<Vec<String>>,
    pub include_controls: bool,
    pub angle_columns: Vec<String>,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            feature_columns: None,
            include_controls: true,
            angle_columns: ANGLE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Joins trades with image features and market controls into an
/// unstandardised observation table.
///
/// Regressor order: controls, then features in table order with each angle
/// column replaced by its `_SIN`/`_COS` pair. Trades without a feature row are
/// dropped (`no_features`), rows with any non-finite value are dropped
/// (`non_finite`). A missing control day is an error.
pub fn build_model_frame(
    trades: &[Transaction],
    features: &FeatureTable,
    controls: &ControlSeries,
    cycles: &CycleTable,
    opts: &FrameOptions,
) -> Result<(ObservationTable, DropLog)> {
    let wanted: Vec<usize> = match &opts.feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                // a selected `_SIN`/`_COS` column refers back to its angle source
                let base = c.strip_suffix("_SIN").or_else(|| c.strip_suffix("_COS")).unwrap_or(c);
                features
                    .column_index(c)
                    .or_else(|| features.column_index(base))
                    .ok_or_else(|| Error::invalid(format!("feature {c} not in feature table")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => (0..features.names.len()).collect(),
    };
    let mut seen = std::collections::BTreeSet::new();
    let wanted: Vec<usize> = wanted.into_iter().filter(|j| seen.insert(*j)).collect();

    // per feature column: either passthrough or angle with a detected unit
    enum Col {
        Plain(usize),
        Angle(usize, AngleUnit),
    }
    let mut cols = Vec::new();
    let mut names: Vec<String> = Vec::new();
    if opts.include_controls {
        names.extend(CONTROL_COLUMNS.iter().map(|s| s.to_string()));
    }
    for &j in &wanted {
        let name = &features.names[j];
        if opts.angle_columns.iter().any(|a| a == name) {
            let unit = AngleUnit::detect(&features.column(j));
            cols.push(Col::Angle(j, unit));
            names.push(format!("{name}_SIN"));
            names.push(format!("{name}_COS"));
        } else {
            cols.push(Col::Plain(j));
            names.push(name.clone());
        }
    }

    let by_id: HashMap<&str, &Vec<f64>> =
        features.rows.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let (start, _) = cycles.window();
    let mut rows = Vec::with_capacity(trades.len());
    let mut dropped = DropLog::default();
    for t in trades {
        let Some(fv) = by_id.get(t.nft_id.as_str()) else {
            dropped.add("no_features");
            continue;
        };
        let cycle_index = cycles
            .cycle_of(t.date)
            .ok_or_else(|| Error::invalid(format!("trade date {} outside the cycle table", t.date)))?;
        let mut regs = Vec::with_capacity(names.len());
        if opts.include_controls {
            let c = controls
                .lookup(t.date)
                .ok_or_else(|| Error::invalid(format!("no market controls within 3 days before {}", t.date)))?;
            regs.extend(c.values());
        }
        for c in &cols {
            match *c {
                Col::Plain(j) => regs.push(fv[j]),
                Col::Angle(j, unit) => {
                    let (s, co) = encode_hue(fv[j], unit).unwrap_or((f64::NAN, f64::NAN));
                    regs.push(s);
                    regs.push(co);
                }
            }
        }
        let y = t.price_usd.ln_1p();
        if !y.is_finite() || regs.iter().any(|v| !v.is_finite()) {
            dropped.add("non_finite");
            continue;
        }
        rows.push(SaleObservation {
            nft_id: t.nft_id.clone(),
            collection_code: t.collection_code.clone(),
            date: t.date,
            y,
            month_index: month_index(t.date, start),
            cycle_index,
            regressors: regs,
        });
    }
    Ok((ObservationTable { regressor_names: names, rows }, dropped))
}

/// Re-derives `cycle_index` for every observation by half-open membership.
pub fn assign_cycles(obs: &mut [SaleObservation], table: &CycleTable) -> Result<()> {
    for o in obs.iter_mut() {
        o.cycle_index = table
            .cycle_of(o.date)
            .ok_or_else(|| Error::invalid(format!("date {} is not covered by the cycle table", o.date)))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerColumn {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Per-column standardisation record (population SD).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<ScalerColumn>,
    pub excluded: Vec<String>,
}

impl Scaler {
    /// Applies the stored statistics to another table with the same columns.
    pub fn apply(&self, table: &ObservationTable) -> Result<ObservationTable> {
        let names: Vec<String> = self.columns.iter().map(|c| c.name.clone()).collect();
        let mut out = table.select_columns(&names)?;
        for r in &mut out.rows {
            for (v, c) in r.regressors.iter_mut().zip(&self.columns) {
                *v = (*v - c.mean) / c.sd;
            }
        }
        Ok(out)
    }
}

/// Z-scores every regressor on the given sample.
///
/// Columns with fewer than two distinct values cannot be standardised and are
/// excluded with a warning.
pub fn zscore(table: &ObservationTable) -> (ObservationTable, Scaler) {
    let mut scaler = Scaler::default();
    for (j, name) in table.regressor_names.iter().enumerate() {
        let col = table.column(j);
        let first = col.first().copied();
        let constant = col.iter().all(|v| Some(*v) == first);
        let sd = stats::pop_sd(&col);
        if constant || !(sd > 0.0) || !sd.is_finite() {
            warn!("regressor {name} has zero variance; excluded from the frame");
            scaler.excluded.push(name.clone());
            continue;
        }
        scaler.columns.push(ScalerColumn { name: name.clone(), mean: stats::mean(&col), sd });
    }
    let out = scaler.apply(table).expect("scaler columns come from the table");
    (out, scaler)
}

/// One NFT x cycle cell of the dynamic model's estimation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCell {
    pub nft_id: String,
    pub collection_code: String,
    pub cycle_index: usize,
    pub n_trades: usize,
    pub y_median: f64,
    pub regressor_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellTable {
    pub regressor_names: Vec<String>,
    pub cells: Vec<AggregatedCell>,
}

impl CellTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.regressor_names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header = vec!["nft_id", "collection_code", "cycle_index", "n_trades", "y_median"];
        header.extend(self.regressor_names.iter().map(String::as_str));
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for c in &self.cells {
            let mut rec = vec![
                c.nft_id.clone(),
                c.collection_code.clone(),
                c.cycle_index.to_string(),
                c.n_trades.to_string(),
                c.y_median.to_string(),
            ];
            rec.extend(c.regressor_means.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let fixed = ["nft_id", "collection_code", "cycle_index", "n_trades", "y_median"];
        let idx: Vec<usize> = fixed.iter().map(|c| column(&headers, c, &file)).collect::<Result<_>>()?;
        let reg_idx: Vec<usize> = (0..headers.len()).filter(|j| !idx.contains(j)).collect();
        let mut cells = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = i + 2;
            let num = |j: usize| -> Result<f64> {
                rec[j].trim().parse().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line,
                    message: format!("bad number {:?} in column {}", &rec[j], &headers[j]),
                })
            };
            cells.push(AggregatedCell {
                nft_id: rec[idx[0]].to_string(),
                collection_code: rec[idx[1]].to_string(),
                cycle_index: num(idx[2])? as usize,
                n_trades: num(idx[3])? as usize,
                y_median: num(idx[4])?,
                regressor_means: reg_idx.iter().map(|&j| num(j)).collect::<Result<_>>()?,
            });
        }
        Ok(Self { regressor_names: reg_idx.iter().map(|&j| headers[j].to_string()).collect(), cells })
    }
}

/// Collapses repeated trades within each NFT x cycle cell: median of `y`,
/// arithmetic means of the regressors. Output is sorted by `(nft_id, cycle)`.
pub fn aggregate_nft_cycle(table: &ObservationTable) -> CellTable {
    let mut groups: BTreeMap<(&str, usize), Vec<&SaleObservation>> = BTreeMap::new();
    for o in &table.rows {
        groups.entry((o.nft_id.as_str(), o.cycle_index)).or_default().push(o);
    }
    let p = table.regressor_names.len();
    let cells = groups
        .into_iter()
        .map(|((nft, cycle), rows)| {
            let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
            let means = (0..p)
                .map(|j| {
                    // summing in sorted order keeps the mean independent of trade order
                    let mut col: Vec<f64> = rows.iter().map(|r| r.regressors[j]).collect();
                    col.sort_by(f64::total_cmp);
                    col.iter().sum::<f64>() / col.len() as f64
                })
                .collect();
            AggregatedCell {
                nft_id: nft.to_string(),
                collection_code: rows[0].collection_code.clone(),
                cycle_index: cycle,
                n_trades: rows.len(),
                y_median: stats::median(&ys),
                regressor_means: means,
            }
        })
        .collect();
    CellTable { regressor_names: table.regressor_names.clone(), cells }
}

/// All unordered regressor pairs with `|r| > 0.95`.
pub fn flag_collinear(table: &ObservationTable) -> Vec<(String, String, f64)> {
    let cols: Vec<Vec<f64>> = (0..table.regressor_names.len()).map(|j| table.column(j)).collect();
    let mut out = Vec::new();
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let r = stats::pearson(&cols[i], &cols[j]);
            if r.abs() > 0.95 {
                out.push((table.regressor_names[i].clone(), table.regressor_names[j].clone(), r));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn obs(nft: &str, cycle: usize, y: f64, regs: Vec<f64>) -> SaleObservation {
        SaleObservation {
            nft_id: nft.into(),
            collection_code: "C".into(),
            date: d("2021-01-05"),
            y,
            month_index: 0,
            cycle_index: cycle,
            regressors: regs,
        }
    }

    fn table(cols: &[(&str, Vec<f64>)]) -> ObservationTable {
        let n = cols[0].1.len();
        ObservationTable {
            regressor_names: cols.iter().map(|c| c.0.to_string()).collect(),
            rows: (0..n)
                .map(|i| obs(&format!("n{i}"), 1, 0.0, cols.iter().map(|c| c.1[i]).collect()))
                .collect(),
        }
    }

    #[test]
    fn hue_examples() {
        let (s, c) = encode_hue(0.0, AngleUnit::Degrees).unwrap();
        assert_eq!((s, c), (0.0, 1.0));
        let (s, c) = encode_hue(90.0, AngleUnit::Degrees).unwrap();
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, c) = encode_hue(0.25, AngleUnit::Cycles).unwrap();
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, c) = encode_hue(-270.0, AngleUnit::Degrees).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && c.abs() < 1e-12);
        assert!(encode_hue(f64::NAN, AngleUnit::Degrees).is_none());
    }

    #[test]
    fn unit_detection_uses_column_max() {
        assert_eq!(AngleUnit::detect(&[0.1, 0.5, 1.0]), AngleUnit::Cycles);
        assert_eq!(AngleUnit::detect(&[0.1, 0.5, 180.0]), AngleUnit::Degrees);
        let (s, _) = encode_hue_column(&[0.25, 90.0]);
        // 0.25 is read as degrees because the column max exceeds 1
        assert!((s[0] - 0.25f64.to_radians().sin()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn hue_pair_on_unit_circle(theta in -1e4f64..1e4) {
            let unit = if theta.abs() > 1.0 { AngleUnit::Degrees } else { AngleUnit::Cycles };
            let (s, c) = encode_hue(theta, unit).unwrap();
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-12);
        }

        #[test]
        fn aggregation_is_order_invariant(ys in proptest::collection::vec(0.0f64..20.0, 1..12), seed in 0u64..1000) {
            let rows: Vec<SaleObservation> = ys
                .iter()
                .enumerate()
                .map(|(i, &y)| obs(if i % 3 == 0 { "a" } else { "b" }, 1 + i % 2, y, vec![y * 0.37, (i as f64).sin()]))
                .collect();
            let t = ObservationTable { regressor_names: vec!["x".into(), "z".into()], rows: rows.clone() };
            let mut shuffled = rows;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let t2 = ObservationTable { regressor_names: t.regressor_names.clone(), rows: shuffled };
            let a = aggregate_nft_cycle(&t);
            let b = aggregate_nft_cycle(&t2);
            prop_assert_eq!(&a, &b);
            let distinct: std::collections::BTreeSet<_> = t.rows.iter().map(|r| (r.nft_id.clone(), r.cycle_index)).collect();
            prop_assert_eq!(a.len(), distinct.len());
        }
    }

    #[test]
    fn zscore_examples() {
        let t = table(&[("a", vec![1.0, 2.0, 3.0]), ("k", vec![5.0, 5.0, 5.0])]);
        let (z, scaler) = zscore(&t);
        assert_eq!(z.regressor_names, vec!["a".to_string()]);
        assert_eq!(scaler.excluded, vec!["k".to_string()]);
        let col = z.column(0);
        let expect = 1.5f64.sqrt();
        assert!((col[0] + expect).abs() < 1e-12 && col[1].abs() < 1e-15 && (col[2] - expect).abs() < 1e-12);
        let (z2, _) = zscore(&z);
        for (a, b) in z.column(0).iter().zip(z2.column(0)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zscore_moments_on_random_columns() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..500).map(|_| 10.0 + 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 1e4).collect();
        let (z, _) = zscore(&table(&[("a", a), ("b", b)]));
        for j in 0..2 {
            let c = z.column(j);
            assert!(stats::mean(&c).abs() < 1e-10);
            assert!((stats::pop_sd(&c) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn aggregation_examples() {
        let t = ObservationTable {
            regressor_names: vec!["x".into()],
            rows: vec![
                obs("a", 1, 1.0, vec![1.0]),
                obs("a", 1, 2.0, vec![2.0]),
                obs("a", 1, 9.0, vec![6.0]),
                obs("a", 2, 1.0, vec![0.0]),
                obs("b", 2, 1.0, vec![0.0]),
                obs("b", 2, 3.0, vec![2.0]),
            ],
        };
        let cells = aggregate_nft_cycle(&t);
        assert_eq!(cells.len(), 3);
        assert_eq!(cells.cells[0].y_median, 2.0);
        assert_eq!(cells.cells[0].regressor_means, vec![3.0]);
        assert_eq!(cells.cells[0].n_trades, 3);
        assert_eq!(cells.cells[2].y_median, 2.0);
        assert!(aggregate_nft_cycle(&ObservationTable::default()).is_empty());
    }

    #[test]
    fn collinearity_flags() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let t = table(&[("a", a.clone()), ("b", b), ("a_copy", a), ("a_neg", neg)]);
        let flags = flag_collinear(&t);
        assert_eq!(flags.len(), 3);
        assert!(flags.iter().any(|f| f.0 == "a" && f.1 == "a_copy" && (f.2 - 1.0).abs() < 1e-12));
        assert!(flags.iter().any(|f| f.0 == "a" && f.1 == "a_neg" && (f.2 + 1.0).abs() < 1e-12));
        assert!(!flags.iter().any(|f| f.0 == "b" || f.1 == "b"));
    }

    #[test]
    fn assign_cycles_total_on_window() {
        let t = CycleTable::reference();
        let (a, b) = t.window();
        let mut rows = Vec::new();
        let mut day = a;
        while day < b {
            let mut o = obs("x", 0, 0.0, vec![]);
            o.date = day;
            rows.push(o);
            day = day.succ_opt().unwrap();
        }
        assign_cycles(&mut rows, &t).unwrap();
        assert!(rows.iter().all(|o| (1..=10).contains(&o.cycle_index)));
        let mut bad = vec![obs("x", 0, 0.0, vec![])];
        bad[0].date = b;
        assert!(assign_cycles(&mut bad, &t).is_err());
    }

    #[test]
    fn month_index_counts_calendar_months() {
        assert_eq!(month_index(d("2021-01-31"), d("2021-01-01")), 0);
        assert_eq!(month_index(d("2021-02-01"), d("2021-01-01")), 1);
        assert_eq!(month_index(d("2025-03-15"), d("2021-01-01")), 50);
    }

    #[test]
    fn csv_round_trip() {
        let t = ObservationTable {
            regressor_names: vec!["x".into(), "z".into()],
            rows: vec![obs("a", 1, 0.1 + 0.2, vec![1.0 / 3.0, -2.5e-9])],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(ObservationTable::read_csv(&p).unwrap(), t);
        let cells = aggregate_nft_cycle(&t);
        let pc = dir.path().join("c.csv");
        cells.write_csv(&pc).unwrap();
        assert_eq!(CellTable::read_csv(&pc).unwrap(), cells);
    }
}
