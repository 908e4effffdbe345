//! `posterior.bin` and `dynamic_summary.csv`.
//!
//! The binary layout is an 8-byte magic, a little-endian `u64` header length,
//! a JSON header (layout, labels, spec, chain/draw counts, seed) and then the
//! draws as little-endian `f64`, chain-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{summary_table, DynamicPosterior, DynamicSpec, Labels, Layout, Summary, SummaryRow};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"HDTVPOST";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layout: Layout,
    labels: Labels,
    spec: DynamicSpec,
    n_chains: usize,
    n_draws: usize,
    seed: u64,
}

pub fn write_posterior(post: &DynamicPosterior, path: &Path) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        layout: post.layout,
        labels: post.labels.clone(),
        spec: post.spec.clone(),
        n_chains: post.n_chains,
        n_draws: post.n_draws,
        seed: post.seed,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * post.draws.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &post.draws {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_posterior(path: &Path) -> Result<DynamicPosterior> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse { file: path.display().to_string(), line: 0, message: msg.to_string() };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a posterior file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize.checked_add(hlen).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {}", header.format_version)));
    }
    let rest = &bytes[body..];
    if rest.len() % 8 != 0 {
        return Err(bad("draw block is not a whole number of f64 values"));
    }
    let draws: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    DynamicPosterior::new(
        header.layout,
        header.labels,
        header.spec,
        header.n_chains,
        header.n_draws,
        header.seed,
        draws,
    )
}

const COLUMNS: [&str; 11] = ["block", "variable", "cycle", "mean", "sd", "q03", "q97", "rhat", "ess", "rank", "sign"];

pub fn write_summary_csv(post: &DynamicPosterior, path: &Path) -> Result<()> {
    write_rows(&summary_table(post), path)
}

pub(crate) fn write_rows(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(COLUMNS).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        let s = &r.summary;
        w.write_record([
            r.block.clone(),
            r.variable.clone(),
            r.cycle.clone(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.q03.to_string(),
            s.q97.to_string(),
            s.rhat.to_string(),
            s.ess.to_string(),
            r.rank.map(|x| x.to_string()).unwrap_or_default(),
            r.sign.clone().unwrap_or_default(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let idx: Vec<usize> =
        COLUMNS.iter().map(|c| crate::ingest::column(&headers, c, &file)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64> {
            rec[idx[j]].trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                message: format!("bad number {:?} in column {}", &rec[idx[j]], COLUMNS[j]),
            })
        };
        let rank = match rec[idx[9]].trim() {
            "" => None,
            s => Some(s.parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                message: format!("bad rank {s:?}"),
            })?),
        };
        let sign = match rec[idx[10]].trim() {
            "" => None,
            s => Some(s.to_string()),
        };
        out.push(SummaryRow {
            block: rec[idx[0]].to_string(),
            variable: rec[idx[1]].to_string(),
            cycle: rec[idx[2]].to_string(),
            summary: Summary { mean: num(3)?, sd: num(4)?, q03: num(5)?, q97: num(6)?, rhat: num(7)?, ess: num(8)? },
            rank,
            sign,
        });
    }
    Ok(out)
}

/// Per-cycle TVP posterior means in file order, for `variable` or the first
/// TVP variable present.
pub fn tvp_cycle_means(rows: &[SummaryRow], variable: Option<&str>) -> Result<(String, Vec<(String, f64)>)> {
    let tvp: Vec<&SummaryRow> = rows.iter().filter(|r| r.block == "tvp_cycle").collect();
    let name = match variable {
        Some(v) => v.to_string(),
        None => tvp.first().map(|r| r.variable.clone()).ok_or_else(|| Error::invalid("summary has no tvp_cycle rows"))?,
    };
    let means: Vec<(String, f64)> =
        tvp.iter().filter(|r| r.variable == name).map(|r| (r.cycle.clone(), r.summary.mean)).collect();
    if means.is_empty() {
        return Err(Error::invalid(format!("summary has no tvp_cycle rows for {name}")));
    }
    Ok((name, means))
}
