//! End-to-end run: extract, frame, select, static fit, BH, aggregate,
//! dynamic fit, bootstrap and report, with a manifest of hashes and counts.
//!
//! Stage seeds are derived from the one master seed. The manifest holds no
//! timestamps, so two runs with the same inputs and seed produce identical
//! manifests; wall-clock times go to `timings.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dyntvp::{self, DynamicData, DynamicSpec, SampleConfig};
use crate::exec::{derive_seed, Exec};
use crate::imgfeat::{self, ExtractConfig, FeatureTable};
use crate::ingest::{self, CycleTable, FrameOptions, ObservationTable, CONTROL_COLUMNS};
use crate::mixedlm::{self, StaticSpec};
use crate::report::{self, ReportInputs};
use crate::robust;
use crate::select::{self, SelectConfig, SelectionData};
use crate::synth::CorpusSpec;
use crate::{Error, Result};

pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

/// Labels for [`derive_seed`]; one per stochastic stage.
pub mod seed_label {
    pub const EXTRACT: u64 = 1;
    pub const SELECT: u64 = 2;
    pub const DYNAMIC: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub images: PathBuf,
    pub transactions: PathBuf,
    pub ethusd: PathBuf,
    pub controls: PathBuf,
    pub cycles: PathBuf,
    #[serde(default)]
    pub cnn_embeddings: Option<PathBuf>,
    #[serde(default)]
    pub style_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub n_tune: usize,
    pub n_draws: usize,
    pub n_chains: usize,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { n_tune: 500, n_draws: 500, n_chains: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSettings {
    pub bootstrap_resamples: usize,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        Self { bootstrap_resamples: 50_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub exec: Exec,
    /// Relative paths resolve against the directory holding the config file.
    pub paths: InputPaths,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// The `seed` field here is ignored; it is derived from the master seed.
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub static_model: StaticSpec,
    #[serde(default)]
    pub dynamic: DynamicSpec,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub robustness: RobustnessSettings,
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.select.quota.validate()?;
        c.dynamic.validate()?;
        Ok(c)
    }

    /// Loads a config file and returns it with its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((c, base))
    }

    pub fn extract_config(&self) -> ExtractConfig {
        ExtractConfig { seed: derive_seed(self.seed, seed_label::EXTRACT), ..self.extract.clone() }
    }

    pub fn select_config(&self) -> SelectConfig {
        SelectConfig { seed: derive_seed(self.seed, seed_label::SELECT), ..self.select.clone() }
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            n_tune: self.sampler.n_tune,
            n_draws: self.sampler.n_draws,
            n_chains: self.sampler.n_chains,
            seed: derive_seed(self.seed, seed_label::DYNAMIC),
            likelihood: true,
        }
    }

    pub fn bootstrap_seed(&self) -> u64 {
        derive_seed(self.seed, seed_label::BOOTSTRAP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Hash over the sorted `(file name, file hash)` list of an image directory.
fn hash_image_dir(dir: &Path) -> Result<String> {
    let mut acc = String::new();
    for (_, path) in imgfeat::list_images(dir)? {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        acc.push_str(&format!("{name}:{}\n", sha256_file(&path)?));
    }
    Ok(sha256_hex(acc.as_bytes()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

struct Run<'a> {
    out: &'a Path,
    stages: Vec<StageRecord>,
    outputs: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Run<'_> {
    /// Runs one stage, tagging any error with the stage name and leaving a
    /// FAILED marker next to the partial outputs.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Vec<(String, usize)>) -> Result<T>) -> Result<T> {
        info!("stage {name}");
        let t0 = Instant::now();
        let mut counts = Vec::new();
        match f(&mut counts) {
            Ok(v) => {
                self.timings.insert(name.to_string(), t0.elapsed().as_secs_f64());
                self.stages.push(StageRecord { stage: name.to_string(), counts: counts.into_iter().collect() });
                Ok(v)
            }
            Err(e) => {
                let message = e.to_string();
                let marker = self.out.join(FAILED_MARKER);
                let _ = std::fs::write(&marker, format!("stage: {name}\nreason: {message}\n"));
                Err(Error::Stage { stage: name.to_string(), message })
            }
        }
    }
}

/// Feature table with PCA columns attached when requested.
pub fn extract_features(cfg: &PipelineConfig, base: &Path) -> Result<FeatureTable> {
    let ecfg = cfg.extract_config();
    let paths = &cfg.paths;
    let deep = [
        ("cnn_pcs", ecfg.cnn_pcs, &paths.cnn_embeddings, "cnn_embeddings", "CNN_PCA_"),
        ("style_pcs", ecfg.style_pcs, &paths.style_embeddings, "style_embeddings", "STYLE_PCA_"),
    ];
    // check preconditions before the expensive pass
    for (knob, n, path, key, _) in &deep {
        if *n == 0 {
            continue;
        }
        match path {
            None => {
                return Err(Error::Config(format!(
                    "{knob} = {n} requests deep features but paths.{key} is not set; \
                     set it to an embeddings CSV or set {knob} = 0"
                )))
            }
            Some(p) if !resolve(base, p).exists() => {
                return Err(Error::Config(format!(
                    "{knob} = {n} requests deep features but {} does not exist; \
                     provide the embeddings file or set {knob} = 0",
                    resolve(base, p).display()
                )))
            }
            _ => {}
        }
    }
    let mut table = imgfeat::extract_dir(&resolve(base, &paths.images), &ecfg, cfg.exec)?;
    for (_, n, path, _, prefix) in deep {
        if n > 0 {
            let emb = imgfeat::load_embeddings(&resolve(base, path.as_ref().expect("checked above")))?;
            imgfeat::attach_pca(&mut table, &emb, n, prefix)?;
        }
    }
    Ok(table)
}

/// Columns of the static model: controls present in the frame, then the
/// selected features.
fn static_columns(frame: &ObservationTable, selected: &[String]) -> Vec<String> {
    CONTROL_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .filter(|c| frame.column_index(c).is_some())
        .chain(selected.iter().cloned())
        .collect()
}

/// Runs every stage and writes the artifacts into `out`.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let mut run = Run { out, stages: Vec::new(), outputs: Vec::new(), timings: BTreeMap::new() };
    let exec = cfg.exec;
    let p = &cfg.paths;

    let inputs = run.stage("inputs", |c| {
        let mut v = vec![FileHash { name: "images".into(), sha256: hash_image_dir(&resolve(base, &p.images))? }];
        let files = [
            ("transactions", Some(&p.transactions)),
            ("ethusd", Some(&p.ethusd)),
            ("controls", Some(&p.controls)),
            ("cycles", Some(&p.cycles)),
            ("cnn_embeddings", p.cnn_embeddings.as_ref()),
            ("style_embeddings", p.style_embeddings.as_ref()),
        ];
        for (name, path) in files {
            if let Some(path) = path {
                let full = resolve(base, path);
                if full.exists() || matches!(name, "transactions" | "ethusd" | "controls" | "cycles") {
                    v.push(FileHash { name: name.into(), sha256: sha256_file(&full)? });
                }
            }
        }
        c.push(("files".into(), v.len()));
        Ok(v)
    })?;

    let features = run.stage("extract", |c| {
        let t = extract_features(cfg, base)?;
        t.write_csv(&run_path(out, "features.csv"))?;
        c.push(("images".into(), t.len()));
        c.push(("columns".into(), t.names.len()));
        Ok(t)
    })?;
    run.outputs.push("features.csv".into());

    let cycles = run.stage("cycles", |c| {
        let t = CycleTable::load(&resolve(base, &p.cycles))?;
        c.push(("cycles".into(), t.len()));
        Ok(t)
    })?;

    let frame = run.stage("frame", |c| {
        let trades = ingest::load_transactions(
            &resolve(base, &p.transactions),
            &resolve(base, &p.ethusd),
            Some(cycles.window()),
        )?;
        let controls = ingest::load_controls(&resolve(base, &p.controls))?;
        let (frame, dropped) =
            ingest::build_model_frame(&trades.rows, &features, &controls, &cycles, &FrameOptions::default())?;
        if frame.is_empty() {
            return Err(Error::invalid("no trades matched an image and a control day"));
        }
        frame.write_csv(&run_path(out, "frame.csv"))?;
        c.push(("input_rows".into(), trades.n_input));
        c.push(("dropped_load".into(), trades.dropped.total()));
        c.push(("dropped_join".into(), dropped.total()));
        c.push(("rows".into(), frame.len()));
        Ok(frame)
    })?;
    run.outputs.push("frame.csv".into());

    let selected = run.stage("select", |c| {
        let data = SelectionData::from_observations(&frame)?;
        let outcome = select::run_selection(&data, &cfg.select_config(), exec)?;
        outcome.report.write_csv(&run_path(out, report::SELECTION_CSV))?;
        select::write_prune_log(&outcome.screen.pruned, &run_path(out, "prune_log.csv"))?;
        c.push(("candidates".into(), data.names.len()));
        c.push(("survivors".into(), outcome.screen.survivors.len()));
        c.push(("selected".into(), outcome.selected().len()));
        Ok(outcome.selected())
    })?;
    run.outputs.push(report::SELECTION_CSV.into());
    run.outputs.push("prune_log.csv".into());

    let cols = static_columns(&frame, &selected);
    let fit = run.stage("fit_static", |c| {
        let spec = StaticSpec { fixed_columns: Some(cols.clone()), ..cfg.static_model.clone() };
        let fit = mixedlm::fit_static(&frame, &spec)?;
        fit.write_csv(&run_path(out, report::STATIC_FIT_CSV))?;
        c.push(("observations".into(), fit.n_obs));
        c.push(("coefficients".into(), fit.names.len()));
        c.push(("converged".into(), usize::from(fit.converged)));
        Ok(fit)
    })?;
    run.outputs.push(report::STATIC_FIT_CSV.into());

    run.stage("bh", |c| {
        let family = mixedlm::default_bh_family(&fit);
        let pv: Vec<(String, f64)> = family
            .iter()
            .map(|n| (n.clone(), fit.p_value[fit.names.iter().position(|m| m == n).expect("family from fit")]))
            .collect();
        let rows = robust::bh_adjust(&pv)?;
        robust::write_bh_csv(&rows, &run_path(out, report::BH_CSV))?;
        c.push(("family".into(), rows.len()));
        c.push(("q_le_0.05".into(), rows.iter().filter(|r| r.q_bh <= 0.05).count()));
        Ok(())
    })?;
    run.outputs.push(report::BH_CSV.into());

    let dyn_spec = DynamicSpec { n_cycles: cycles.len(), ..cfg.dynamic.clone() };
    let cells = run.stage("aggregate", |c| {
        let mut keep = cols.clone();
        for t in &dyn_spec.tvp_block {
            if frame.column_index(t).is_none() {
                return Err(Error::Config(format!("TVP variable {t} is not a column of the modelling frame")));
            }
            if !keep.contains(t) {
                keep.push(t.clone());
            }
        }
        let (z, _) = ingest::zscore(&frame.select_columns(&keep)?);
        let cells = ingest::aggregate_nft_cycle(&z);
        cells.write_csv(&run_path(out, "cells.csv"))?;
        c.push(("cells".into(), cells.len()));
        Ok(cells)
    })?;
    run.outputs.push("cells.csv".into());

    let post = run.stage("fit_dynamic", |c| {
        let static_block: Vec<String> = match &dyn_spec.static_block {
            Some(s) => s.clone(),
            None => cols.iter().filter(|n| !dyn_spec.tvp_block.contains(n)).cloned().collect(),
        };
        let spec = DynamicSpec { static_block: Some(static_block), ..dyn_spec.clone() };
        let data = DynamicData::from_cells(&cells, &spec, Some(&cycles.names()))?;
        let post = dyntvp::sample(&data, &spec, &cfg.sample_config(), exec)?;
        dyntvp::write_posterior(&post, &run_path(out, "posterior.bin"))?;
        dyntvp::write_summary_csv(&post, &run_path(out, report::DYNAMIC_SUMMARY_CSV))?;
        c.push(("cells".into(), data.n()));
        c.push(("draws".into(), post.total_draws()));
        c.push(("unconverged".into(), post.unconverged().len()));
        Ok(post)
    })?;
    run.outputs.push("posterior.bin".into());
    run.outputs.push(report::DYNAMIC_SUMMARY_CSV.into());

    run.stage("bootstrap", |c| {
        let rows = dyntvp::summary_table(&post);
        let (_, means) = dyntvp::tvp_cycle_means(&rows, None)?;
        let m: Vec<f64> = means.iter().map(|(_, v)| *v).collect();
        let seed = cfg.bootstrap_seed();
        let b = robust::cycle_block_bootstrap(&m, cfg.robustness.bootstrap_resamples, seed, exec)?;
        b.write_csv(&run_path(out, report::BOOTSTRAP_CSV), seed)?;
        c.push(("cycles".into(), b.n_cycles));
        c.push(("resamples".into(), b.n_resamples));
        Ok(())
    })?;
    run.outputs.push(report::BOOTSTRAP_CSV.into());

    run.stage("report", |_| report::write_report(&ReportInputs::from_dir(out), &run_path(out, report::REPORT_MD)))?;
    run.outputs.push(report::REPORT_MD.into());

    // execution mode and output location do not affect results
    let hashed = PipelineConfig { exec: Exec::Parallel, out_dir: None, ..cfg.clone() };
    let config_json = serde_json::to_vec(&hashed).map_err(|e| Error::invalid(e.to_string()))?;
    let outputs = run
        .outputs
        .iter()
        .map(|n| Ok(FileHash { name: n.clone(), sha256: sha256_file(&out.join(n))? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "hedonic".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_sha256: sha256_hex(&config_json),
        inputs,
        stages: run.stages.clone(),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))? + "\n";
    let mpath = out.join(MANIFEST);
    std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let timings = serde_json::to_string_pretty(&run.timings).map_err(|e| Error::invalid(e.to_string()))? + "\n";
    let tpath = out.join(TIMINGS);
    std::fs::write(&tpath, timings).map_err(|e| Error::io(&tpath, e))?;
    Ok(manifest)
}

/// Config for a corpus written by [`crate::synth::write_corpus`], with paths
/// relative to the corpus directory and PCA sizes that fit its embeddings.
pub fn corpus_config(spec: &CorpusSpec, seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        exec: Exec::Parallel,
        paths: InputPaths {
            images: "images".into(),
            transactions: "transactions.csv".into(),
            ethusd: "ethusd.csv".into(),
            controls: "controls.csv".into(),
            cycles: "cycles.toml".into(),
            cnn_embeddings: Some("cnn_embeddings.csv".into()),
            style_embeddings: Some("style_embeddings.csv".into()),
        },
        out_dir: None,
        extract: ExtractConfig { cnn_pcs: spec.cnn_dim.min(8), style_pcs: spec.style_dim.min(4), ..Default::default() },
        select: SelectConfig::default(),
        static_model: StaticSpec::default(),
        dynamic: DynamicSpec::default(),
        sampler: SamplerSettings::default(),
        robustness: RobustnessSettings::default(),
    }
}

fn run_path(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_per_stage() {
        let toml = r#"
            seed = 5
            [paths]
            images = "i"
            transactions = "t.csv"
            ethusd = "e.csv"
            controls = "c.csv"
            cycles = "cy.toml"
        "#;
        let c = PipelineConfig::from_toml_str(toml).unwrap();
        let s = [c.extract_config().seed, c.select_config().seed, c.sample_config().seed, c.bootstrap_seed()];
        let mut u = s.to_vec();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml_str("seed = 1\nbogus = 2\n[paths]\nimages='i'\ntransactions='t'\nethusd='e'\ncontrols='c'\ncycles='y'\n").is_err());
    }
}
