//! `hedonic`: command-line driver for the pricing pipeline.
//!
//! Every subcommand maps onto one pipeline stage; `run` chains them all.
//! Failures exit with status 1 and a `stage <name>:` prefix on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use hedonic_core::dyntvp::{self, DynamicData, DynamicSpec, SampleConfig};
use hedonic_core::exec::Exec;
use hedonic_core::imgfeat::{self, ExtractConfig, FeatureTable};
use hedonic_core::ingest::{self, CellTable, CycleTable, FrameOptions, ObservationTable};
use hedonic_core::mixedlm::{self, StaticFitResult, StaticSpec};
use hedonic_core::pipeline::{self, PipelineConfig};
use hedonic_core::report::{self, ReportInputs};
use hedonic_core::robust;
use hedonic_core::select::{self, SelectConfig, SelectionData};
use hedonic_core::synth::{self, CorpusSpec, ImageSpec, SyntheticDynamicSpec, SyntheticPanelSpec};
use hedonic_core::{Error, Result};

#[derive(Parser)]
#[command(name = "hedonic", version, about = "Hedonic pricing pipeline for generative-art markets")]
struct Cli {
    /// Run every data-parallel loop on one thread (results are identical).
    #[arg(long, global = true)]
    sequential: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract image features into a CSV.
    Extract(ExtractArgs),
    /// Join trades, features and controls into a modelling frame.
    Frame(FrameArgs),
    /// Three-stage feature selection.
    Select(SelectArgs),
    /// Static crossed random-effects fit.
    FitStatic(FitStaticArgs),
    /// Standardise a frame and collapse it to NFT-by-cycle cells.
    Aggregate(AggregateArgs),
    /// Dynamic model with cycle-varying coefficients.
    FitDynamic(FitDynamicArgs),
    /// FDR adjustment and cycle-block bootstrap.
    #[command(subcommand)]
    Robustness(RobustnessCmd),
    /// Synthetic fixtures with known ground truth.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Render report.md from the CSV artifacts in a directory.
    Report(ReportArgs),
    /// Full pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML with extraction settings (Canny, Hough, palette size, PCA sizes).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raw CNN embeddings (image_id, v0..).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Raw style embeddings (image_id, v0..).
    #[arg(long)]
    style_embeddings: Option<PathBuf>,
    #[arg(long)]
    cnn_pcs: Option<usize>,
    #[arg(long)]
    style_pcs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct FrameInputs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    trades: Option<PathBuf>,
    #[arg(long)]
    ethusd: Option<PathBuf>,
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Cycle table; defaults to the built-in ten-cycle reference table.
    #[arg(long)]
    cycles: Option<PathBuf>,
}

#[derive(Args)]
struct FrameArgs {
    #[command(flatten)]
    inputs: FrameInputs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// A frame written by `frame`; otherwise one is built from the inputs below.
    #[arg(long)]
    frame: Option<PathBuf>,
    #[command(flatten)]
    inputs: FrameInputs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the Stage-1 prune log.
    #[arg(long)]
    prune_log: Option<PathBuf>,
}

#[derive(Args)]
struct FitStaticArgs {
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Selection report; its selected features join the controls as regressors.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    frame: PathBuf,
    /// Comma-separated regressors to keep; all by default.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitDynamicArgs {
    #[arg(long)]
    cells: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Cycle table used for the number and names of cycles.
    #[arg(long)]
    cycles: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    tune: usize,
    #[arg(long, default_value_t = 200)]
    draws: usize,
    #[arg(long, default_value_t = 2)]
    chains: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    summary: PathBuf,
}

#[derive(Subcommand)]
enum RobustnessCmd {
    /// Benjamini-Hochberg q-values for a family of coefficients.
    Bh {
        #[arg(long)]
        fit: PathBuf,
        /// One coefficient name per line; defaults to all non-dummy fixed effects.
        #[arg(long)]
        family: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Percentile bootstrap over per-cycle TVP posterior means.
    Bootstrap {
        #[arg(long)]
        tvp_summary: PathBuf,
        #[arg(long)]
        variable: Option<String>,
        #[arg(long, default_value_t = 50_000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SimArgs {
    /// TOML spec; defaults are used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed in the spec.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Procedural images plus truth.csv.
    Images(SimArgs),
    /// Panel from the static model plus truth.json.
    Static(SimArgs),
    /// Cells from the dynamic model plus truth.json.
    Dynamic(SimArgs),
    /// Complete raw-input corpus with a ready pipeline.toml.
    Corpus(SimArgs),
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding the CSV artifacts.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))? + "\n";
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required unless --frame is given")))
}

fn build_frame(inputs: &FrameInputs) -> Result<ObservationTable> {
    let features = FeatureTable::read_csv(require(&inputs.features, "features")?)?;
    let cycles = match &inputs.cycles {
        Some(p) => CycleTable::load(p)?,
        None => CycleTable::reference(),
    };
    let trades =
        ingest::load_transactions(require(&inputs.trades, "trades")?, require(&inputs.ethusd, "ethusd")?, Some(cycles.window()))?;
    let controls = ingest::load_controls(require(&inputs.controls, "controls")?)?;
    let (frame, dropped) =
        ingest::build_model_frame(&trades.rows, &features, &controls, &cycles, &FrameOptions::default())?;
    info!("frame: {} rows; dropped {} at load, {} at join", frame.len(), trades.dropped.total(), dropped.total());
    Ok(frame)
}

fn cmd_extract(a: &ExtractArgs, exec: Exec) -> Result<()> {
    let mut cfg: ExtractConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => ExtractConfig { cnn_pcs: 0, style_pcs: 0, ..Default::default() },
    };
    cfg.seed = a.seed;
    if let Some(n) = a.cnn_pcs {
        cfg.cnn_pcs = n;
    }
    if let Some(n) = a.style_pcs {
        cfg.style_pcs = n;
    }
    for (n, path, flag) in [(cfg.cnn_pcs, &a.embeddings, "embeddings"), (cfg.style_pcs, &a.style_embeddings, "style-embeddings")] {
        if n > 0 && path.as_ref().map_or(true, |p| !p.exists()) {
            return Err(Error::Config(format!(
                "{n} PCA components requested but --{flag} is missing or does not exist; pass the embeddings CSV or set the PCA size to 0"
            )));
        }
    }
    let mut table = imgfeat::extract_dir(&a.images, &cfg, exec)?;
    if let Some(p) = a.embeddings.as_deref().filter(|_| cfg.cnn_pcs > 0) {
        imgfeat::attach_pca(&mut table, &imgfeat::load_embeddings(p)?, cfg.cnn_pcs, "CNN_PCA_")?;
    }
    if let Some(p) = a.style_embeddings.as_deref().filter(|_| cfg.style_pcs > 0) {
        imgfeat::attach_pca(&mut table, &imgfeat::load_embeddings(p)?, cfg.style_pcs, "STYLE_PCA_")?;
    }
    table.write_csv(&a.out)?;
    println!("{} images, {} features -> {}", table.len(), table.names.len(), a.out.display());
    Ok(())
}

fn cmd_select(a: &SelectArgs, exec: Exec) -> Result<()> {
    let frame = match &a.frame {
        Some(p) => ObservationTable::read_csv(p)?,
        None => build_frame(&a.inputs)?,
    };
    let mut cfg = match &a.config {
        Some(p) => SelectConfig::from_toml_str(
            &std::fs::read_to_string(p).map_err(|e| io_err(p, e))?,
        )?,
        None => SelectConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let data = SelectionData::from_observations(&frame)?;
    let outcome = select::run_selection(&data, &cfg, exec)?;
    outcome.report.write_csv(&a.out)?;
    if let Some(p) = &a.prune_log {
        select::write_prune_log(&outcome.screen.pruned, p)?;
    }
    let chosen = outcome.selected();
    println!("{} of {} features selected: {}", chosen.len(), data.names.len(), chosen.join(", "));
    Ok(())
}

fn cmd_fit_static(a: &FitStaticArgs) -> Result<()> {
    let frame = ObservationTable::read_csv(&a.frame)?;
    let mut spec = match &a.spec {
        Some(p) => StaticSpec::from_toml_str(&std::fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => StaticSpec::default(),
    };
    if let Some(sel) = &a.selection {
        let chosen = select::SelectionReport::read_csv(sel)?.selected();
        let cols = ingest::CONTROL_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .filter(|c| frame.column_index(c).is_some())
            .chain(chosen)
            .collect();
        spec.fixed_columns = Some(cols);
    }
    let fit = mixedlm::fit_static(&frame, &spec)?;
    fit.write_csv(&a.out)?;
    print_static(&fit);
    Ok(())
}

fn print_static(fit: &StaticFitResult) {
    for (i, n) in fit.names.iter().enumerate() {
        if !n.starts_with(mixedlm::MONTH_PREFIX) {
            println!("{n:<32} {:>9.4} ({:.4})  p={:.4}", fit.beta[i], fit.se[i], fit.p_value[i]);
        }
    }
    println!(
        "variances: nft {:.4}, collection {:.4}, residual {:.4}",
        fit.sigma2_nft, fit.sigma2_coll, fit.sigma2_resid
    );
}

fn cmd_aggregate(a: &AggregateArgs) -> Result<()> {
    let mut frame = ObservationTable::read_csv(&a.frame)?;
    if let Some(cols) = &a.columns {
        frame = frame.select_columns(cols)?;
    }
    let (z, _) = ingest::zscore(&frame);
    let cells = ingest::aggregate_nft_cycle(&z);
    cells.write_csv(&a.out)?;
    println!("{} rows -> {} cells", frame.len(), cells.len());
    Ok(())
}

fn cmd_fit_dynamic(a: &FitDynamicArgs, exec: Exec) -> Result<()> {
    let cells = CellTable::read_csv(&a.cells)?;
    let mut spec = match &a.spec {
        Some(p) => DynamicSpec::from_toml_str(&std::fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => DynamicSpec::default(),
    };
    let names = match &a.cycles {
        Some(p) => {
            let t = CycleTable::load(p)?;
            spec.n_cycles = t.len();
            Some(t.names())
        }
        None => None,
    };
    let data = DynamicData::from_cells(&cells, &spec, names.as_deref())?;
    let cfg = SampleConfig { n_tune: a.tune, n_draws: a.draws, n_chains: a.chains, seed: a.seed, likelihood: true };
    let post = dyntvp::sample(&data, &spec, &cfg, exec)?;
    dyntvp::write_posterior(&post, &a.out)?;
    dyntvp::write_summary_csv(&post, &a.summary)?;
    let bad = post.unconverged();
    if !bad.is_empty() {
        eprintln!("warning: R-hat above 1.1 for {}", bad.join(", "));
    }
    println!("{} cells, {} draws -> {}", data.n(), post.total_draws(), a.out.display());
    Ok(())
}

fn cmd_robustness(c: &RobustnessCmd, exec: Exec) -> Result<()> {
    match c {
        RobustnessCmd::Bh { fit, family, out } => {
            let fit = StaticFitResult::read_csv(fit)?;
            let names: Vec<String> = match family {
                Some(p) => std::fs::read_to_string(p)
                    .map_err(|e| io_err(p, e))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(String::from)
                    .collect(),
                None => mixedlm::default_bh_family(&fit),
            };
            let pv = names
                .iter()
                .map(|n| {
                    let i = fit
                        .names
                        .iter()
                        .position(|m| m == n)
                        .ok_or_else(|| Error::InvalidInput(format!("family member {n} is not a coefficient of the fit")))?;
                    Ok((n.clone(), fit.p_value[i]))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows = robust::bh_adjust(&pv)?;
            robust::write_bh_csv(&rows, out)?;
            for r in &rows {
                println!("{:<32} p={:.4} q={:.4} {}", r.name, r.p_raw, r.q_bh, r.tier.stars());
            }
        }
        RobustnessCmd::Bootstrap { tvp_summary, variable, resamples, seed, out } => {
            let rows = dyntvp::read_summary_csv(tvp_summary)?;
            let (name, means) = dyntvp::tvp_cycle_means(&rows, variable.as_deref())?;
            let m: Vec<f64> = means.iter().map(|(_, v)| *v).collect();
            let b = robust::cycle_block_bootstrap(&m, *resamples, *seed, exec)?;
            b.write_csv(out, *seed)?;
            println!(
                "{name}: mean {:.4}, 95% CI [{:.4}, {:.4}], {}/{} cycles positive",
                b.mean_of_cycle_means, b.ci_low, b.ci_high, b.n_positive, b.n_cycles
            );
        }
    }
    Ok(())
}

fn cmd_simulate(c: &SimulateCmd, exec: Exec) -> Result<()> {
    match c {
        SimulateCmd::Images(a) => {
            let spec: ImageSpec = a.spec.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            let fixtures = synth::gen_images(&spec);
            create_dir(&a.out)?;
            synth::write_images(&fixtures, &a.out)?;
            println!("{} fixtures -> {}", fixtures.len(), a.out.display());
        }
        SimulateCmd::Static(a) => {
            let mut spec: SyntheticPanelSpec = a.spec.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let (table, truth) = synth::gen_static_panel(&spec)?;
            create_dir(&a.out)?;
            table.write_csv(&a.out.join("panel.csv"))?;
            write_json(&truth, &a.out.join("truth.json"))?;
            println!("{} observations -> {}", table.len(), a.out.display());
        }
        SimulateCmd::Dynamic(a) => {
            let mut spec: SyntheticDynamicSpec = a.spec.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let (cells, truth) = synth::gen_dynamic_cells(&spec)?;
            create_dir(&a.out)?;
            cells.write_csv(&a.out.join("cells.csv"))?;
            write_json(&truth, &a.out.join("truth.json"))?;
            println!("{} cells -> {}", cells.len(), a.out.display());
        }
        SimulateCmd::Corpus(a) => {
            let mut spec: CorpusSpec = a.spec.as_deref().map(read_toml).transpose()?.unwrap_or_default();
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            create_dir(&a.out)?;
            let traits = synth::write_corpus(&spec, &a.out, exec)?;
            write_json(&traits, &a.out.join("traits.json"))?;
            let cfg = pipeline::corpus_config(&spec, spec.seed);
            let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
            let path = a.out.join("pipeline.toml");
            std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            println!("{} NFTs -> {}", traits.len(), a.out.display());
        }
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.dir.join(report::REPORT_MD));
    report::write_report(&ReportInputs::from_dir(&a.dir), &out)?;
    println!("report -> {}", out.display());
    Ok(())
}

fn cmd_run(a: &RunArgs, sequential: bool) -> Result<()> {
    let (mut cfg, base) = PipelineConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if sequential {
        cfg.exec = Exec::Sequential;
    }
    let out = match (&a.out, &cfg.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(Error::Config("no output directory: pass --out or set out_dir".into())),
    };
    let m = pipeline::run_pipeline(&cfg, &base, &out)?;
    for s in &m.stages {
        let counts: Vec<String> = s.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<12} {}", s.stage, counts.join(" "));
    }
    println!("artifacts -> {}", out.display());
    Ok(())
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Extract(_) => "extract",
        Command::Frame(_) => "frame",
        Command::Select(_) => "select",
        Command::FitStatic(_) => "fit_static",
        Command::Aggregate(_) => "aggregate",
        Command::FitDynamic(_) => "fit_dynamic",
        Command::Robustness(RobustnessCmd::Bh { .. }) => "bh",
        Command::Robustness(RobustnessCmd::Bootstrap { .. }) => "bootstrap",
        Command::Simulate(_) => "simulate",
        Command::Report(_) => "report",
        Command::Run(_) => "run",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let result = match &cli.command {
        Command::Extract(a) => cmd_extract(a, exec),
        Command::Frame(a) => build_frame(&a.inputs).and_then(|f| {
            f.write_csv(&a.out)?;
            println!("{} rows -> {}", f.len(), a.out.display());
            Ok(())
        }),
        Command::Select(a) => cmd_select(a, exec),
        Command::FitStatic(a) => cmd_fit_static(a),
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::FitDynamic(a) => cmd_fit_dynamic(a, exec),
        Command::Robustness(c) => cmd_robustness(c, exec),
        Command::Simulate(c) => cmd_simulate(c, exec),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a, cli.sequential),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Stage { stage, message }) => {
            eprintln!("error: stage {stage}: {message}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: stage {}: {e}", stage_name(&cli.command));
            ExitCode::FAILURE
        }
    }
}
