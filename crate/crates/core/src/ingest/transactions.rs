use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use super::market::{column, RateSeries};
use super::parse_date;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transaction {
    pub nft_id: String,
    pub collection_code: String,
    pub date: NaiveDate,
    pub price_eth: f64,
    pub ethusd_rate: f64,
    pub price_usd: f64,
}

/// Reason-coded counts of rejected rows, so that `kept + dropped == input`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DropLog {
    pub counts: BTreeMap<String, usize>,
}

impl DropLog {
    pub fn add(&mut self, reason: &str) {
        *self.counts.entry(reason.to_string()).or_default() += 1;
    }

    pub fn get(&self, reason: &str) -> usize {
        self.counts.get(reason).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn merge(&mut self, other: &DropLog) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_default() += v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedTransactions {
    pub rows: Vec<Transaction>,
    pub dropped: DropLog,
    pub n_input: usize,
}

/// Loads `transactions.csv` and joins the trade-day ETH/USD rate.
///
/// Rows with missing identifiers, unparseable dates, unparseable or negative
/// prices, or dates outside `window` (half-open) are dropped and counted.
/// A trade whose rate cannot be found within the forward-fill horizon is a
/// hard error.
pub fn load_transactions(
    path: &Path,
    rates_path: &Path,
    window: Option<(NaiveDate, NaiveDate)>,
) -> Result<LoadedTransactions> {
    let rates = RateSeries::load(rates_path)?;
    load_transactions_with_rates(path, &rates, window)
}

pub(crate) fn load_transactions_with_rates(
    path: &Path,
    rates: &RateSeries,
    window: Option<(NaiveDate, NaiveDate)>,
) -> Result<LoadedTransactions> {
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let ni = column(&headers, "nft_id", &file)?;
    let ci = column(&headers, "collection_code", &file)?;
    let di = column(&headers, "date", &file)?;
    let pi = column(&headers, "price_eth", &file)?;

    let mut rows = Vec::new();
    let mut dropped = DropLog::default();
    let mut n_input = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        n_input += 1;
        let field = |j: usize| rec.get(j).map(str::trim).unwrap_or("");
        let (nft, coll, date_s, price_s) = (field(ni), field(ci), field(di), field(pi));
        if nft.is_empty() || coll.is_empty() || date_s.is_empty() || price_s.is_empty() {
            dropped.add("missing_field");
            continue;
        }
        let Some(date) = parse_date(date_s) else {
            dropped.add("bad_date");
            continue;
        };
        let price_eth: f64 = match price_s.parse() {
            Ok(p) if f64::is_finite(p) => p,
            _ => {
                dropped.add("bad_price");
                continue;
            }
        };
        if price_eth < 0.0 {
            dropped.add("negative_price");
            continue;
        }
        if let Some((a, b)) = window {
            if date < a || date >= b {
                dropped.add("out_of_window");
                continue;
            }
        }
        let rate = rates.lookup(date).ok_or_else(|| Error::Parse {
            file: file.clone(),
            line: i + 2,
            message: format!("no ETH/USD rate within 3 days before {date}"),
        })?;
        rows.push(Transaction {
            nft_id: nft.to_string(),
            collection_code: coll.to_string(),
            date,
            price_eth,
            ethusd_rate: rate,
            price_usd: price_eth * rate,
        });
    }
    Ok(LoadedTransactions { rows, dropped, n_input })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn window() -> Option<(NaiveDate, NaiveDate)> {
        Some((
            NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            NaiveDate::from_ymd_opt(2025, 4, 1).unwrap(),
        ))
    }

    #[test]
    fn joins_rate_and_counts_drops() {
        let tx = write(&[
            "nft_id,collection_code,date,price_eth",
            "a,COLL,2021-06-01,1.0",
            "b,COLL,2021-06-01,0",
            "c,COLL,2020-06-01,1.0",
            ",COLL,2021-06-01,1.0",
            "d,COLL,06/01/2021,1.0",
            "e,COLL,2021-06-01,-2",
        ]);
        let rates = write(&["date,ethusd", "2021-06-01,2500", "2020-06-01,230"]);
        let out = load_transactions(tx.path(), rates.path(), window()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].price_usd, 2500.0);
        assert_eq!(out.rows[1].price_usd, 0.0);
        assert_eq!(out.dropped.get("out_of_window"), 1);
        assert_eq!(out.dropped.get("missing_field"), 1);
        assert_eq!(out.dropped.get("bad_date"), 1);
        assert_eq!(out.dropped.get("negative_price"), 1);
        assert_eq!(out.rows.len() + out.dropped.total(), out.n_input);
    }

    #[test]
    fn missing_rate_is_an_error() {
        let tx = write(&["nft_id,collection_code,date,price_eth", "a,C,2021-06-10,1.0"]);
        let rates = write(&["date,ethusd", "2021-06-01,2500"]);
        assert!(load_transactions(tx.path(), rates.path(), window()).is_err());
    }

    #[test]
    fn missing_file_is_an_error() {
        let rates = write(&["date,ethusd"]);
        assert!(load_transactions(Path::new("/nonexistent/tx.csv"), rates.path(), None).is_err());
    }
}
