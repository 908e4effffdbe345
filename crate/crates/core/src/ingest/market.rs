use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use super::{parse_date_or_err, MAX_FFILL_DAYS};
use crate::{Error, Result};

/// Regressor names of the market controls, in design-matrix order.
pub const CONTROL_COLUMNS: [&str; 6] = [
    "ETH_return",
    "BTC_return",
    "SOL_return",
    "SP500_return",
    "NASDAQCOM_return",
    "fear_greed_index",
];

/// Daily ETH/USD rate.
#[derive(Debug, Clone, Default)]
pub struct RateSeries {
    rates: BTreeMap<NaiveDate, f64>,
}

impl RateSeries {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (NaiveDate, f64)>) -> Self {
        Self { rates: pairs.into_iter().collect() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let di = column(&headers, "date", &file)?;
        let ri = column(&headers, "ethusd", &file)?;
        let mut rates = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = i + 2;
            let date = parse_date_or_err(&rec[di], &file, line)?;
            let rate: f64 = rec[ri].trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                message: format!("bad ethusd value {:?}", &rec[ri]),
            })?;
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::Parse { file, line, message: "ethusd must be positive".into() });
            }
            rates.insert(date, rate);
        }
        Ok(Self { rates })
    }

    /// Rate on `date`, forward-filled from at most [`MAX_FFILL_DAYS`] earlier.
    pub fn lookup(&self, date: NaiveDate) -> Option<f64> {
        ffill(&self.rates, date).copied()
    }
}

fn ffill<V>(map: &BTreeMap<NaiveDate, V>, date: NaiveDate) -> Option<&V> {
    let (d, v) = map.range(..=date).next_back()?;
    ((date - *d).num_days() <= MAX_FFILL_DAYS).then_some(v)
}

pub(crate) fn column(headers: &csv::StringRecord, name: &str, file: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse { file: file.to_string(), line: 1, message: format!("missing column {name:?}") })
}

/// One day of market controls.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketControls {
    pub date: NaiveDate,
    pub eth_return: f64,
    pub btc_return: f64,
    pub sol_return: f64,
    pub sp500_return: f64,
    pub nasdaq_return: f64,
    pub fear_greed: u8,
}

impl MarketControls {
    /// Values in [`CONTROL_COLUMNS`] order.
    pub fn values(&self) -> [f64; 6] {
        [
            self.eth_return,
            self.btc_return,
            self.sol_return,
            self.sp500_return,
            self.nasdaq_return,
            f64::from(self.fear_greed),
        ]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ControlSeries {
    days: BTreeMap<NaiveDate, MarketControls>,
}

impl ControlSeries {
    pub fn new(rows: impl IntoIterator<Item = MarketControls>) -> Result<Self> {
        let mut days = BTreeMap::new();
        for r in rows {
            if r.fear_greed > 100 {
                return Err(Error::invalid(format!("fear_greed {} outside [0,100] on {}", r.fear_greed, r.date)));
            }
            let v = r.values();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("non-finite control on {}", r.date)));
            }
            days.insert(r.date, r);
        }
        Ok(Self { days })
    }

    pub fn lookup(&self, date: NaiveDate) -> Option<&MarketControls> {
        ffill(&self.days, date)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MarketControls> {
        self.days.values()
    }
}

const PRICE_KEYS: [&str; 5] = ["eth", "btc", "sol", "sp500", "nasdaq"];

/// Loads `controls.csv`.
///
/// Accepts either `<asset>_return` columns or `<asset>_close` columns (converted
/// to simple returns, dropping the first day), plus `fear_greed`.
pub fn load_controls(path: &Path) -> Result<ControlSeries> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let di = column(&headers, "date", &file)?;
    let fi = column(&headers, "fear_greed", &file)?;
    let use_close = headers.iter().any(|h| h.trim() == "eth_close");
    let suffix = if use_close { "_close" } else { "_return" };
    let idx: Vec<usize> = PRICE_KEYS
        .iter()
        .map(|k| column(&headers, &format!("{k}{suffix}"), &file))
        .collect::<Result<_>>()?;

    let mut raw: Vec<(NaiveDate, [f64; 5], u8)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = i + 2;
        let date = parse_date_or_err(&rec[di], &file, line)?;
        let mut vals = [0.0; 5];
        for (v, &j) in vals.iter_mut().zip(&idx) {
            *v = rec[j].trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                message: format!("bad numeric value {:?}", &rec[j]),
            })?;
        }
        let fg: f64 = rec[fi].trim().parse().map_err(|_| Error::Parse {
            file: file.clone(),
            line,
            message: format!("bad fear_greed {:?}", &rec[fi]),
        })?;
        if !(0.0..=100.0).contains(&fg) {
            return Err(Error::Parse { file, line, message: format!("fear_greed {fg} outside [0,100]") });
        }
        raw.push((date, vals, fg.round() as u8));
    }
    raw.sort_by_key(|r| r.0);

    let rows: Vec<MarketControls> = if use_close {
        raw.windows(2)
            .map(|w| {
                let r: Vec<f64> = (0..5).map(|k| w[1].1[k] / w[0].1[k] - 1.0).collect();
                MarketControls {
                    date: w[1].0,
                    eth_return: r[0],
                    btc_return: r[1],
                    sol_return: r[2],
                    sp500_return: r[3],
                    nasdaq_return: r[4],
                    fear_greed: w[1].2,
                }
            })
            .collect()
    } else {
        raw.iter()
            .map(|(date, v, fg)| MarketControls {
                date: *date,
                eth_return: v[0],
                btc_return: v[1],
                sol_return: v[2],
                sp500_return: v[3],
                nasdaq_return: v[4],
                fear_greed: *fg,
            })
            .collect()
    };
    ControlSeries::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn forward_fill_three_days() {
        let s = RateSeries::from_pairs([(d("2021-06-04"), 2500.0)]);
        assert_eq!(s.lookup(d("2021-06-04")), Some(2500.0));
        assert_eq!(s.lookup(d("2021-06-07")), Some(2500.0));
        assert_eq!(s.lookup(d("2021-06-08")), None);
        assert_eq!(s.lookup(d("2021-06-03")), None);
    }

    #[test]
    fn closes_become_returns() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,eth_close,btc_close,sol_close,sp500_close,nasdaq_close,fear_greed").unwrap();
        writeln!(f, "2021-01-01,100,10,1,1000,2000,50").unwrap();
        writeln!(f, "2021-01-02,110,9,1,1000,2200,60").unwrap();
        let c = load_controls(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        let m = c.lookup(d("2021-01-02")).unwrap();
        assert!((m.eth_return - 0.1).abs() < 1e-12);
        assert!((m.btc_return + 0.1).abs() < 1e-12);
        assert!((m.nasdaq_return - 0.1).abs() < 1e-12);
        assert_eq!(m.fear_greed, 60);
    }

    #[test]
    fn rejects_out_of_range_sentiment() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,eth_return,btc_return,sol_return,sp500_return,nasdaq_return,fear_greed").unwrap();
        writeln!(f, "2021-01-01,0,0,0,0,0,101").unwrap();
        assert!(load_controls(f.path()).is_err());
    }
}
