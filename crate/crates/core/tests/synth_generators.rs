//! Moment and nesting checks of the synthetic generators.

use hedonic_core::synth::{gen_dynamic_cells, gen_static_panel, SyntheticDynamicSpec, SyntheticPanelSpec};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn excess_kurtosis(v: &[f64]) -> f64 {
    let m = mean(v);
    let n = v.len() as f64;
    let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

#[test]
fn doubling_residual_variance_doubles_the_noise() {
    let base = SyntheticPanelSpec { n_nfts: 8000, trades_per_nft: (6, 7), seed: 31, ..Default::default() };
    let (t1, a) = gen_static_panel(&base).unwrap();
    assert!(t1.len() >= 50_000);
    let (_, b) = gen_static_panel(&SyntheticPanelSpec { sigma2_resid: 1.6, seed: 32, ..base.clone() }).unwrap();
    let ratio = var(&b.noise) / var(&a.noise);
    assert!((ratio / 2.0 - 1.0).abs() < 0.05, "ratio {ratio}");
    assert!((var(&a.noise) / 0.8 - 1.0).abs() < 0.05);
}

#[test]
fn panel_bytes_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticPanelSpec { n_nfts: 100, ..Default::default() };
    let paths = [dir.path().join("a.csv"), dir.path().join("b.csv")];
    for p in &paths {
        gen_static_panel(&spec).unwrap().0.write_csv(p).unwrap();
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
}

#[test]
fn huge_nu_gives_gaussian_tails() {
    let spec = SyntheticDynamicSpec { cells_per_collection_cycle: 500, nu: 1e6, seed: 3, ..Default::default() };
    let (cells, truth) = gen_dynamic_cells(&spec).unwrap();
    assert_eq!(cells.len(), 100_000);
    let k = excess_kurtosis(&truth.noise);
    assert!(k.abs() < 0.2, "excess kurtosis {k}");
    // and nu = 5 is visibly heavy-tailed
    let (_, heavy) = gen_dynamic_cells(&SyntheticDynamicSpec { nu: 5.0, ..spec }).unwrap();
    assert!(excess_kurtosis(&heavy.noise) > 1.0);
}

#[test]
fn cycle_means_follow_the_delta_pattern() {
    let t = 10;
    let a = 0.5;
    let delta: Vec<f64> = (0..t).map(|k| if k == 3 { a } else { -a / (t as f64 - 1.0) }).collect();
    let spec = SyntheticDynamicSpec {
        gamma: vec![],
        tvp: vec![],
        delta: delta.clone(),
        sigma_coll: 0.0,
        sigma_cc: 0.0,
        sigma: 0.4,
        cells_per_collection_cycle: 50,
        seed: 4,
        ..Default::default()
    };
    let (cells, _) = gen_dynamic_cells(&spec).unwrap();
    for (k, d) in delta.iter().enumerate() {
        let ys: Vec<f64> = cells.cells.iter().filter(|c| c.cycle_index == k + 1).map(|c| c.y_median - spec.alpha).collect();
        // t(5) noise has variance sigma^2 * 5/3
        let se = (0.16 * 5.0 / 3.0 / ys.len() as f64).sqrt();
        assert!((mean(&ys) - d).abs() < 4.0 * se, "cycle {k}: {} vs {d}", mean(&ys));
    }
}

#[test]
fn without_tvp_block_it_is_the_static_cycle_model() {
    let spec = SyntheticDynamicSpec { tvp: vec![], cells_per_collection_cycle: 3, seed: 6, ..Default::default() };
    let (cells, truth) = gen_dynamic_cells(&spec).unwrap();
    assert_eq!(cells.regressor_names, vec!["X1".to_string(), "X2".to_string()]);
    for (c, e) in cells.cells.iter().zip(&truth.noise) {
        let tau = c.cycle_index - 1;
        let xg: f64 = c.regressor_means.iter().zip(&truth.gamma).map(|(x, (_, g))| x * g).sum();
        let want = truth.alpha + xg + truth.delta[tau] + truth.u_coll[&c.collection_code] + truth.w[&c.collection_code][tau] + e;
        assert!((c.y_median - want).abs() < 1e-12);
    }
}
