//! Markdown report rendered from the CSV artifacts of a run.
//!
//! Every section is optional except that at least one artifact must exist;
//! a malformed artifact is an error naming the file and line.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dyntvp::{read_summary_csv, SummaryRow, RHAT_WARN};
use crate::mixedlm::{semi_elasticity, StaticFitResult, INTERCEPT, MONTH_PREFIX};
use crate::robust::{read_bh_csv, BhRow, BootstrapResult, Tier};
use crate::select::SelectionReport;
use crate::{Error, Result};

pub const SELECTION_CSV: &str = "selection.csv";
pub const STATIC_FIT_CSV: &str = "static_fit.csv";
pub const BH_CSV: &str = "bh.csv";
pub const DYNAMIC_SUMMARY_CSV: &str = "dynamic_summary.csv";
pub const BOOTSTRAP_CSV: &str = "bootstrap.csv";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportInputs {
    pub selection: Option<PathBuf>,
    pub static_fit: Option<PathBuf>,
    pub bh: Option<PathBuf>,
    pub dynamic_summary: Option<PathBuf>,
    pub bootstrap: Option<PathBuf>,
}

impl ReportInputs {
    /// Picks up the standard artifact names that exist in `dir`.
    pub fn from_dir(dir: &Path) -> Self {
        let pick = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            selection: pick(SELECTION_CSV),
            static_fit: pick(STATIC_FIT_CSV),
            bh: pick(BH_CSV),
            dynamic_summary: pick(DYNAMIC_SUMMARY_CSV),
            bootstrap: pick(BOOTSTRAP_CSV),
        }
    }

    fn is_empty(&self) -> bool {
        self.selection.is_none()
            && self.static_fit.is_none()
            && self.bh.is_none()
            && self.dynamic_summary.is_none()
            && self.bootstrap.is_none()
    }
}

/// `+16.4%` style reading of a log-point coefficient.
pub fn pct(beta: f64) -> String {
    format!("{:+.1}%", 100.0 * semi_elasticity(beta))
}

fn f3(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3}")
    } else {
        "n/a".into()
    }
}

fn f4(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.4}")
    } else {
        "n/a".into()
    }
}

fn pval(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn selection_section(out: &mut String, sel: &SelectionReport) {
    out.push_str("## Feature selection\n\n");
    let chosen: Vec<_> = sel.rows.iter().filter(|r| r.selected).collect();
    if chosen.is_empty() {
        out.push_str("### No features selected\n\n");
        let _ = writeln!(
            out,
            "None of the {} candidate image features passed screening and the gate. \
             Downstream models use the market controls only.\n",
            sel.rows.len()
        );
        return;
    }
    let _ = writeln!(out, "{} of {} candidates selected.\n", chosen.len(), sel.rows.len());
    out.push_str("| feature | family | stability | PI mean | PI sd | score | gate |\n");
    out.push_str("|---|---|---:|---:|---:|---:|---|\n");
    for r in chosen {
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {} | {} | {:.3} | {} |",
            r.feature,
            r.family.as_str(),
            r.stability,
            f4(r.pi_mean),
            f4(r.pi_sd),
            r.blended_score,
            r.gate_reason
        );
    }
    out.push('\n');
}

fn static_section(out: &mut String, fit: &StaticFitResult, bh: Option<&[BhRow]>) {
    out.push_str("## Static mixed-effects model\n\n");
    let q: HashMap<&str, &BhRow> = bh.unwrap_or_default().iter().map(|r| (r.name.as_str(), r)).collect();
    out.push_str("| variable | coef | SE | p | q (BH) | semi-elasticity |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    let mut n_months = 0;
    for k in 0..fit.names.len() {
        let name = &fit.names[k];
        if name.starts_with(MONTH_PREFIX) {
            n_months += 1;
            continue;
        }
        let qcol = q
            .get(name.as_str())
            .map(|r| format!("{}{}", f3(r.q_bh), r.tier.stars()))
            .unwrap_or_else(|| "".into());
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            name,
            f4(fit.beta[k]),
            f4(fit.se[k]),
            pval(fit.p_value[k]),
            qcol,
            if name == INTERCEPT { String::new() } else { pct(fit.beta[k]) }
        );
    }
    out.push('\n');
    if n_months > 0 {
        let _ = writeln!(out, "{n_months} month fixed effects estimated, not shown.\n");
    }
    out.push_str("Variance components:\n\n");
    out.push_str("| component | variance |\n|---|---:|\n");
    let _ = writeln!(out, "| NFT | {} |", f3(fit.sigma2_nft));
    let _ = writeln!(out, "| collection | {} |", f3(fit.sigma2_coll));
    let _ = writeln!(out, "| residual | {} |\n", f3(fit.sigma2_resid));
    match fit.icc() {
        Ok(v) => {
            let _ = writeln!(out, "ICC = {v:.3}\n");
        }
        Err(_) => out.push_str("ICC undefined (all variance components zero).\n\n"),
    }
    let _ = writeln!(
        out,
        "{} observations, {} NFTs, {} collections; converged: {}.\n",
        fit.n_obs,
        fit.n_nft_groups,
        fit.n_collections,
        if fit.converged { "yes" } else { "no" }
    );
    if !fit.dropped.is_empty() {
        let _ = writeln!(out, "Dropped by the retry ladder: {}.\n", fit.dropped.join(", "));
    }
}

fn bh_section(out: &mut String, rows: &[BhRow]) {
    out.push_str("## Benjamini–Hochberg adjustment\n\n");
    out.push_str("| variable | p | q | tier |\n|---|---:|---:|---|\n");
    for r in rows {
        let _ = writeln!(out, "| {} | {} | {} | {} |", r.name, pval(r.p_raw), f3(r.q_bh), r.tier);
    }
    let n = |t: Tier| rows.iter().filter(|r| r.tier >= t).count();
    let _ = writeln!(
        out,
        "\n{} of {} coefficients at q <= 0.10, {} at q <= 0.05, {} at q <= 0.01.\n",
        n(Tier::Q10),
        rows.len(),
        n(Tier::Q05),
        n(Tier::Q01)
    );
}

fn dynamic_section(out: &mut String, rows: &[SummaryRow]) {
    out.push_str("## Dynamic model\n\n");
    let block = |b: &'static str| rows.iter().filter(move |r| r.block == b);
    out.push_str("Static block and TVP averages:\n\n");
    out.push_str("| variable | mean | sd | 3% | 97% | R-hat | ESS |\n|---|---:|---:|---:|---:|---:|---:|\n");
    for r in block("static").chain(block("tvp_mean")) {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.variable,
            f4(s.mean),
            f4(s.sd),
            f4(s.q03),
            f4(s.q97),
            f3(s.rhat),
            if s.ess.is_finite() { format!("{:.0}", s.ess) } else { "n/a".into() }
        );
    }
    out.push('\n');

    let mut tvp: Vec<&SummaryRow> = block("tvp_cycle").collect();
    let mut vars: Vec<&str> = tvp.iter().map(|r| r.variable.as_str()).collect();
    vars.dedup();
    tvp.sort_by_key(|r| (r.variable.clone(), r.rank.unwrap_or(usize::MAX)));
    for v in vars {
        let _ = writeln!(out, "Per-cycle coefficient of {v}, ranked by posterior mean:\n");
        out.push_str("| rank | cycle | mean | sd | 3% | 97% | sign |\n|---:|---|---:|---:|---:|---:|---|\n");
        for r in tvp.iter().filter(|r| r.variable == v) {
            let s = &r.summary;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.rank.map(|x| x.to_string()).unwrap_or_default(),
                r.cycle,
                f4(s.mean),
                f4(s.sd),
                f4(s.q03),
                f4(s.q97),
                r.sign.clone().unwrap_or_default()
            );
        }
        out.push('\n');
    }

    let ce: Vec<&SummaryRow> = block("cycle_effect").collect();
    if !ce.is_empty() {
        out.push_str("Cycle effects:\n\n| cycle | mean | sd | semi-elasticity |\n|---|---:|---:|---:|\n");
        for r in ce {
            let _ = writeln!(out, "| {} | {} | {} | {} |", r.cycle, f4(r.summary.mean), f4(r.summary.sd), pct(r.summary.mean));
        }
        out.push('\n');
    }
    out.push_str("Scale parameters:\n\n| parameter | mean | sd | R-hat |\n|---|---:|---:|---:|\n");
    for r in block("variance") {
        let _ = writeln!(out, "| {} | {} | {} | {} |", r.variable, f4(r.summary.mean), f4(r.summary.sd), f3(r.summary.rhat));
    }
    out.push('\n');
    let bad: Vec<&str> =
        rows.iter().filter(|r| r.summary.rhat > RHAT_WARN).map(|r| r.variable.as_str()).collect();
    if bad.is_empty() {
        let _ = writeln!(out, "All reported R-hat values are at most {RHAT_WARN}.\n");
    } else {
        let _ = writeln!(out, "**Convergence warning:** R-hat above {RHAT_WARN} for {}.\n", bad.join(", "));
    }
}

fn bootstrap_section(out: &mut String, b: &BootstrapResult) {
    out.push_str("## Cycle-block bootstrap\n\n");
    out.push_str("| mean of cycle means | 95% CI | share positive | resamples |\n|---:|---|---:|---:|\n");
    let _ = writeln!(
        out,
        "| {} | [{}, {}] | {}/{} | {} |\n",
        f4(b.mean_of_cycle_means),
        f4(b.ci_low),
        f4(b.ci_high),
        b.n_positive,
        b.n_cycles,
        b.n_resamples
    );
}

/// Renders the report document.
pub fn emit_report(inputs: &ReportInputs) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::invalid("no report artifacts found"));
    }
    let mut out = String::from("# Hedonic pricing report\n\n");
    if let Some(p) = &inputs.selection {
        selection_section(&mut out, &SelectionReport::read_csv(p)?);
    }
    let bh = inputs.bh.as_deref().map(read_bh_csv).transpose()?;
    if let Some(p) = &inputs.static_fit {
        static_section(&mut out, &StaticFitResult::read_csv(p)?, bh.as_deref());
    }
    if let Some(rows) = &bh {
        bh_section(&mut out, rows);
    }
    if let Some(p) = &inputs.dynamic_summary {
        dynamic_section(&mut out, &read_summary_csv(p)?);
    }
    if let Some(p) = &inputs.bootstrap {
        bootstrap_section(&mut out, &BootstrapResult::read_csv(p)?);
    }
    Ok(out)
}

pub fn write_report(inputs: &ReportInputs, path: &Path) -> Result<()> {
    let text = emit_report(inputs)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pct_examples() {
        assert_eq!(pct(0.152), "+16.4%");
        assert_eq!(pct(-0.473), "-37.7%");
        assert_eq!(pct(0.390), "+47.7%");
        assert_eq!(pct(1.182), "+226.1%");
    }

    #[test]
    fn empty_inputs_are_an_error() {
        assert!(emit_report(&ReportInputs::default()).is_err());
    }
}
