//! Drives the `hedonic` binary the way a user would.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hedonic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hedonic")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = hedonic(args);
    assert!(o.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small corpus with a cheap sampler and bootstrap budget.
fn small_corpus(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let spec = dir.join("corpus.toml");
    fs::write(&spec, "n_collections = 4\nnfts_per_collection = 10\nimage_size = 128\nseed = 3\n").unwrap();
    ok(&["simulate", "corpus", "--spec", p(&spec), "--out", p(dir)]);
    let cfg = dir.join("pipeline.toml");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("n_tune = 500", "n_tune = 60")
        .replace("n_draws = 500", "n_draws = 60")
        .replace("bootstrap_resamples = 50000", "bootstrap_resamples = 2000")
        .replace("n_runs = 8", "n_runs = 4")
        .replace("n_trees = 200", "n_trees = 30")
        .replace("n_repeats = 10", "n_repeats = 3");
    fs::write(&cfg, text).unwrap();
}

#[test]
fn run_is_byte_stable_and_emits_every_table() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    small_corpus(&corpus);
    let cfg = corpus.join("pipeline.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["run", "--config", p(&cfg), "--out", p(&a)]);
    ok(&["--sequential", "run", "--config", p(&cfg), "--out", p(&b)]);
    for f in ["selection.csv", "static_fit.csv", "bh.csv", "dynamic_summary.csv", "bootstrap.csv", "report.md"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert!(!a.join("FAILED").exists());
    let report = fs::read_to_string(a.join("report.md")).unwrap();
    for heading in ["## Static", "ICC", "## Benjamini", "## Dynamic", "## Cycle-block bootstrap"] {
        assert!(report.contains(heading), "report lacks {heading}");
    }

    // a different seed changes the manifest
    let c = tmp.path().join("c");
    ok(&["run", "--config", p(&cfg), "--out", p(&c), "--seed", "99"]);
    assert_ne!(fs::read(a.join("manifest.json")).unwrap(), fs::read(c.join("manifest.json")).unwrap());
}

#[test]
fn missing_embeddings_abort_at_extract() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    small_corpus(&corpus);
    fs::remove_file(corpus.join("cnn_embeddings.csv")).unwrap();
    let out = tmp.path().join("out");
    let o = hedonic(&["run", "--config", p(&corpus.join("pipeline.toml")), "--out", p(&out)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage extract"), "{err}");
    assert!(err.contains("cnn_embeddings"), "{err}");
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("stage: extract"));
}

#[test]
fn extract_requires_embeddings_for_pcs() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("imgs");
    ok(&["simulate", "images", "--out", p(&imgs)]);
    let o = hedonic(&["extract", "--images", p(&imgs.join("images")), "--out", "x.csv", "--cnn-pcs", "100"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: stage extract"));
    let feats = tmp.path().join("features.csv");
    ok(&["extract", "--images", p(&imgs.join("images")), "--out", p(&feats), "--seed", "1"]);
    let text = fs::read_to_string(&feats).unwrap();
    assert!(text.lines().next().unwrap().starts_with("image_id,"));
}

#[test]
fn bootstrap_from_a_summary_file() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = tmp.path().join("dynamic_summary.csv");
    let means = [0.018, 0.012, 0.011, 0.001, -0.004, -0.005, -0.006, -0.008, -0.008, -0.049];
    let mut text = String::from("block,variable,cycle,mean,sd,q03,q97,rhat,ess,rank,sign\n");
    for (i, m) in means.iter().enumerate() {
        text.push_str(&format!("tvp_cycle,Z,C{},{m},0.01,0,0,1,100,,\n", i + 1));
    }
    fs::write(&summary, text).unwrap();
    let out = tmp.path().join("bootstrap.csv");
    let o = ok(&["robustness", "bootstrap", "--tvp-summary", p(&summary), "--resamples", "5000", "--seed", "1", "--out", p(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("4/10 cycles positive"));
    assert!(out.exists());
}

#[test]
fn static_fit_and_bh_from_simulated_panel() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("panel.toml");
    fs::write(&spec, "n_collections = 6\nn_nfts = 60\n").unwrap();
    ok(&["simulate", "static", "--spec", p(&spec), "--out", p(tmp.path())]);
    let fit = tmp.path().join("static_fit.csv");
    let static_spec = tmp.path().join("static.toml");
    fs::write(&static_spec, "standardize = false\n").unwrap();
    ok(&["fit-static", "--frame", p(&tmp.path().join("panel.csv")), "--spec", p(&static_spec), "--out", p(&fit)]);
    let family = tmp.path().join("family.txt");
    fs::write(&family, "X1\nX2\nX4\n").unwrap();
    let bh = tmp.path().join("bh.csv");
    ok(&["robustness", "bh", "--fit", p(&fit), "--family", p(&family), "--out", p(&bh)]);
    assert_eq!(fs::read_to_string(&bh).unwrap().lines().count(), 4);
    fs::write(&family, "NOT_A_COEF\n").unwrap();
    let o = hedonic(&["robustness", "bh", "--fit", p(&fit), "--family", p(&family), "--out", p(&bh)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage bh"));
}

#[test]
fn unknown_config_keys_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nnonsense = 2\n").unwrap();
    let o = hedonic(&["run", "--config", p(&cfg), "--out", p(tmp.path())]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage run"));
}
