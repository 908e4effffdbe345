//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use chrono::NaiveDate;
use hedonic_core::dyntvp::{DynamicData, DynamicPosterior, DynamicSpec};
use hedonic_core::imgfeat::{extract_image, preprocess, ExtractConfig};
use hedonic_core::select::{Family, PiStats, SelectionData};
use hedonic_core::synth::{
    gen_dynamic_cells, gen_images, DynamicTruth, ImageFixture, ImageSpec, SyntheticDynamicSpec, TruthKind,
    DOMINANT_BAND,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const TVP: &str = "Z";

/// Cells from the reference dynamic generator with one TVP column named `Z`
/// following `path`, plus a model spec that matches them.
pub fn dynamic_fixture(path: Vec<f64>, seed: u64) -> (DynamicData, DynamicSpec, DynamicTruth) {
    let s = SyntheticDynamicSpec { tvp: vec![(TVP.into(), path)], seed, ..Default::default() };
    let (cells, truth) = gen_dynamic_cells(&s).unwrap();
    let spec = DynamicSpec { tvp_block: vec![TVP.into()], n_cycles: s.n_cycles, ..Default::default() };
    let data = DynamicData::from_cells(&cells, &spec, None).unwrap();
    (data, spec, truth)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Cycle pairs `(a, b, |E[d]|, SD[d])` of the first TVP path whose posterior
/// mean difference `d = B_a - B_b` exceeds two posterior SDs of `d`.
pub fn flat_null_violations(post: &DynamicPosterior) -> Vec<(usize, usize, f64, f64)> {
    let l = &post.layout;
    let paths: Vec<Vec<f64>> = (0..l.t).map(|tau| post.values(l.b(0, tau))).collect();
    let mut out = Vec::new();
    for a in 0..l.t {
        for b in a + 1..l.t {
            let d: Vec<f64> = paths[a].iter().zip(&paths[b]).map(|(x, y)| x - y).collect();
            let (m, s) = (mean(&d).abs(), sd(&d));
            if m > 2.0 * s {
                out.push((a, b, m, s));
            }
        }
    }
    out
}

/// Largest absolute per-draw sum of the cycle effects and of each
/// collection's collection x cycle row.
pub fn max_constraint_violation(post: &DynamicPosterior) -> f64 {
    let l = &post.layout;
    let mut worst = 0.0f64;
    for d in post.iter_draws() {
        worst = worst.max((0..l.t).map(|t| d[l.delta(t)]).sum::<f64>().abs());
        for c in 0..l.c {
            worst = worst.max((0..l.t).map(|t| d[l.w(c, t)]).sum::<f64>().abs());
        }
    }
    worst
}

pub fn sample_mean(v: &[f64]) -> f64 {
    mean(v)
}

pub fn sample_sd(v: &[f64]) -> f64 {
    sd(v)
}

/// Relative SD errors `(name, got, want)` of a prior-only run against the
/// analytic prior SDs, plus the half-normal mean of `sigma_coll`.
pub fn prior_moment_checks(post: &DynamicPosterior, spec: &DynamicSpec) -> Vec<(&'static str, f64, f64)> {
    let l = post.layout;
    let pr = &spec.priors;
    let hn_sd = (1.0 - 2.0 / std::f64::consts::PI).sqrt();
    let t = l.t as f64;
    let sds = [
        ("alpha", l.alpha(), pr.alpha_sd),
        ("gamma", l.gamma(0), pr.gamma_sd),
        ("betabar", l.betabar(0), pr.betabar_sd),
        // delta = sigma_cycle * (delta0 - mean): variance E[s^2] (1 - 1/T)
        ("delta", l.delta(0), pr.sigma_cycle_scale * (1.0 - 1.0 / t).sqrt()),
        ("sigma_coll", l.sigma_coll(), pr.sigma_coll_scale * hn_sd),
        ("sigma_cycle", l.sigma_cycle(), pr.sigma_cycle_scale * hn_sd),
        ("omega", l.omega(0), pr.omega_scale * hn_sd),
    ];
    let mut out: Vec<(&'static str, f64, f64)> =
        sds.iter().map(|(n, j, want)| (*n, sd(&post.values(*j)), *want)).collect();
    out.push((
        "sigma_coll mean",
        mean(&post.values(l.sigma_coll())),
        pr.sigma_coll_scale * (2.0 / std::f64::consts::PI).sqrt(),
    ));
    out
}

fn dominant_band(feats: &[(String, f64)]) -> usize {
    (1..=5)
        .max_by(|a, b| {
            let get = |k: usize| feats.iter().find(|(n, _)| *n == format!("TEXTURE_FFT_BAND_{k}")).unwrap().1;
            get(*a).total_cmp(&get(*b))
        })
        .unwrap()
}

pub fn extract_fixture(fx: &ImageFixture, cfg: &ExtractConfig) -> Vec<(String, f64)> {
    let frame = if fx.canonical { fx.image.clone() } else { preprocess(&fx.image, &fx.id).unwrap() };
    extract_image(&frame, &fx.id, cfg).unwrap()
}

/// Every fixture truth value the extractor misses, as readable strings.
pub fn image_fixture_failures() -> (usize, Vec<String>) {
    let cfg = ExtractConfig::default();
    let mut checked = 0;
    let mut failures = Vec::new();
    for fx in gen_images(&ImageSpec::default()) {
        let feats = extract_fixture(&fx, &cfg);
        for t in &fx.truth {
            checked += 1;
            let got = if t.feature == DOMINANT_BAND {
                dominant_band(&feats) as f64
            } else {
                match feats.iter().find(|(n, _)| *n == t.feature) {
                    Some((_, v)) => *v,
                    None => {
                        failures.push(format!("{}: no column {}", fx.id, t.feature));
                        continue;
                    }
                }
            };
            let ok = match t.kind {
                TruthKind::Trivial => got == t.value,
                TruthKind::Derived => (got - t.value).abs() <= t.tol,
            };
            if !ok {
                failures.push(format!("{}:{} got {got} want {} ± {}", fx.id, t.feature, t.value, t.tol));
            }
        }
    }
    (checked, failures)
}

/// Fixture ids whose two extractions differ in any bit.
pub fn nondeterministic_fixtures() -> Vec<String> {
    let cfg = ExtractConfig::default();
    gen_images(&ImageSpec::default())
        .iter()
        .filter(|fx| {
            let a: Vec<u64> = extract_fixture(fx, &cfg).iter().map(|(_, v)| v.to_bits()).collect();
            let b: Vec<u64> = extract_fixture(fx, &cfg).iter().map(|(_, v)| v.to_bits()).collect();
            a != b
        })
        .map(|fx| fx.id.clone())
        .collect()
}

pub const PLANTED: [&str; 3] = ["COLOR_P1", "EDGE_P2", "TEXTURE_P3"];

/// n = 2000 rows on strictly increasing dates, 20 handcrafted features of
/// which the three in [`PLANTED`] carry signal; the rest are pure noise.
pub fn planted_selection_data(seed: u64) -> SelectionData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2000;
    let families = ["COLOR", "EDGE", "TEXTURE", "PALETTE", "LINEART", "COMPOSITION"];
    let mut names: Vec<String> = PLANTED.iter().map(|s| s.to_string()).collect();
    for k in 0..17 {
        names.push(format!("{}_N{k:02}", families[k % families.len()]));
    }
    let columns: Vec<Vec<f64>> =
        names.iter().map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let coef = [0.8, -0.6, 0.5];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let signal: f64 = coef.iter().enumerate().map(|(j, b)| b * columns[j][i]).sum();
            signal + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    let dates = (0..n).map(|i| d0 + chrono::Days::new(i as u64)).collect();
    SelectionData::new(names, columns, y, dates).unwrap()
}

/// 30 scored features, ten each from handcrafted, CNN and style families,
/// with stabilities on the 1/8 grid and random importance.
pub fn quota_fixture(seed: u64) -> (Vec<String>, Vec<Family>, Vec<f64>, Vec<PiStats>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    for i in 0..10 {
        names.push(format!("EDGE_F{i}"));
        names.push(format!("CNN_PCA_{}", i + 1));
        names.push(format!("STYLE_PCA_{}", i + 1));
    }
    let families: Vec<Family> = names.iter().map(|n| Family::of(n).unwrap()).collect();
    let stability: Vec<f64> = names.iter().map(|_| rng.random_range(0..=8) as f64 / 8.0).collect();
    let pi = names
        .iter()
        .map(|_| {
            let mean = rng.random_range(-0.02..0.08);
            let sd = rng.random_range(0.001..0.03);
            PiStats { mean, sd, low: mean - 1.96 * sd / 10f64.sqrt() }
        })
        .collect();
    (names, families, stability, pi)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Least squares through the normal equations; `x` is row-major rows.
pub fn ols_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let xtx = (0..p).map(|a| (0..p).map(|b| x.iter().map(|r| r[a] * r[b]).sum()).collect()).collect();
    let xty = (0..p).map(|a| x.iter().zip(y).map(|(r, v)| r[a] * v).sum()).collect();
    solve_dense(xtx, xty)
}

/// `(1/2n)‖y − Xβ‖² + λ‖β‖₁`, written out independently of the library.
pub fn lasso_objective_oracle(x: &[Vec<f64>], y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(r, v)| {
            let f: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            (v - f).powi(2)
        })
        .sum();
    rss / (2.0 * y.len() as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Exhaustive grid search over three coefficients, refined by repeatedly
/// shrinking the box around the best grid point. Returns the minimum found.
pub fn lasso_grid_oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let mut centre = [0.0; 3];
    let mut half = 4.0;
    let steps = 20i32;
    let mut best = (centre.to_vec(), lasso_objective_oracle(x, y, &centre, lambda));
    for _ in 0..40 {
        let h = half / steps as f64;
        for i in -steps..=steps {
            for j in -steps..=steps {
                for k in -steps..=steps {
                    let b = [centre[0] + i as f64 * h, centre[1] + j as f64 * h, centre[2] + k as f64 * h];
                    let f = lasso_objective_oracle(x, y, &b, lambda);
                    if f < best.1 {
                        best = (b.to_vec(), f);
                    }
                }
            }
        }
        centre = [best.0[0], best.0[1], best.0[2]];
        half /= 4.0;
    }
    best
}

/// True value of every fixed effect in a static fit of the synthetic panel:
/// intercept (plus the baseline month), slopes, and month contrasts.
pub fn panel_true_coefficients(
    fit: &hedonic_core::mixedlm::StaticFitResult,
    spec: &hedonic_core::synth::SyntheticPanelSpec,
    truth: &hedonic_core::synth::PanelTruth,
) -> Vec<(String, f64)> {
    use hedonic_core::mixedlm::{INTERCEPT, MONTH_PREFIX};
    let label = |m: usize| (spec.start + chrono::Months::new(m as u32)).format("%Y-%m").to_string();
    let baseline = (0..spec.n_months)
        .find(|&m| !fit.names.contains(&format!("{MONTH_PREFIX}{}", label(m))))
        .expect("one month is the baseline");
    fit.names
        .iter()
        .map(|n| {
            let v = if n == INTERCEPT {
                truth.intercept + truth.month_effects[baseline]
            } else if let Some(l) = n.strip_prefix(MONTH_PREFIX) {
                let m = (0..spec.n_months).find(|&m| label(m) == l).expect("known month");
                truth.month_effects[m] - truth.month_effects[baseline]
            } else {
                truth.beta.iter().find(|(b, _)| b == n).expect("known slope").1
            };
            (n.clone(), v)
        })
        .collect()
}

fn bh_q(ps: &[f64]) -> Vec<f64> {
    let named: Vec<(String, f64)> = ps.iter().enumerate().map(|(i, p)| (format!("v{i}"), *p)).collect();
    hedonic_core::robust::bh_adjust(&named).unwrap().iter().map(|r| r.q_bh).collect()
}

/// Textbook step-up rule: reject the k smallest p where k is the largest
/// rank with p_(k) <= k alpha / m.
pub fn step_up(ps: &[f64], alpha: f64) -> Vec<bool> {
    let m = ps.len();
    let mut sorted: Vec<f64> = ps.to_vec();
    sorted.sort_by(f64::total_cmp);
    match (1..=m).rev().find(|&k| sorted[k - 1] <= k as f64 * alpha / m as f64) {
        None => vec![false; m],
        Some(k) => ps.iter().map(|p| *p <= sorted[k - 1]).collect(),
    }
}

/// True when `alpha` is too close to a critical value `p m / k` for the
/// comparison to be decided by anything but rounding.
pub fn bh_boundary_tie(ps: &[f64], alpha: f64) -> bool {
    let m = ps.len() as f64;
    ps.iter().any(|p| (1..=ps.len()).any(|k| (p * m / k as f64 - alpha).abs() <= 1e-9))
}

/// Checks q in [p, 1], monotone in p, agreement with the step-up rule,
/// stability of the rejection set under re-adjustment, and no more
/// rejections than the unadjusted p at the same threshold.
pub fn bh_property_violation(ps: &[f64], alpha: f64) -> Option<String> {
    let q = bh_q(ps);
    if let Some((p, v)) = ps.iter().zip(&q).find(|(p, v)| **v < **p || **v > 1.0) {
        return Some(format!("q {v} outside [{p}, 1]"));
    }
    let mut order: Vec<usize> = (0..ps.len()).collect();
    order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
    if order.windows(2).any(|w| q[w[0]] > q[w[1]]) {
        return Some("q not monotone in p".into());
    }
    let reject: Vec<bool> = q.iter().map(|v| *v <= alpha).collect();
    if reject != step_up(ps, alpha) {
        return Some("rejection set differs from the step-up rule".into());
    }
    // rerunning BH on the rejected hypotheses alone rejects all of them again
    let kept: Vec<f64> = ps.iter().zip(&reject).filter(|(_, r)| **r).map(|(p, _)| *p).collect();
    if !kept.is_empty() && bh_q(&kept).iter().any(|v| *v > alpha) {
        return Some("rejection set not stable under re-adjustment".into());
    }
    if reject.iter().filter(|r| **r).count() > ps.iter().filter(|p| **p <= alpha).count() {
        return Some("more rejections than unadjusted".into());
    }
    None
}
