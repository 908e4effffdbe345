//! A small self-consistent input corpus for end-to-end runs: procedural
//! artwork images, trades priced from latent image traits, a daily ETH/USD
//! series, daily market controls, the cycle table and embedding files.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Days, NaiveDate};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::{derive_seed, hash_str, map_slice, Exec};
use crate::ingest::CycleTable;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_collections: usize,
    pub nfts_per_collection: usize,
    /// Inclusive range of trades per NFT.
    pub trades_per_nft: (usize, usize),
    pub image_size: u32,
    pub cnn_dim: usize,
    pub style_dim: usize,
    /// Premium per SD of the latent saturation trait.
    pub saturation_effect: f64,
    /// Premium per SD of the latent busyness trait.
    pub busyness_effect: f64,
    /// Extra saturation premium in cycles 5 to 7.
    pub saturation_boom: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_collections: 6,
            nfts_per_collection: 20,
            trades_per_nft: (6, 14),
            image_size: 256,
            cnn_dim: 24,
            style_dim: 12,
            saturation_effect: 0.4,
            busyness_effect: -0.3,
            saturation_boom: 0.3,
            seed: 42,
        }
    }
}

/// Per-NFT latent traits that drive both appearance and price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NftTraits {
    pub nft_id: String,
    pub collection_code: String,
    pub saturation: f64,
    pub busyness: f64,
    pub hue: f64,
}

/// Files written by [`write_corpus`], relative to the corpus directory.
pub const CORPUS_FILES: [&str; 7] = [
    "images",
    "transactions.csv",
    "ethusd.csv",
    "controls.csv",
    "cycles.toml",
    "cnn_embeddings.csv",
    "style_embeddings.csv",
];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// HSL in ([0, 360), [0, 1], [0, 1]) to 8-bit RGB.
fn hsl_rgb(h: f64, s: f64, l: f64) -> Rgb<u8> {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let q = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([q(r), q(g), q(b)])
}

/// Flat-shaded composition: a tinted background, a few filled rectangles and
/// discs in the NFT's hue, and `busyness`-many thin strokes.
fn draw(t: &NftTraits, size: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = hsl_rgb(t.hue + 180.0, 0.15 + 0.2 * t.saturation, rng.random_range(0.15..0.85));
    let mut img = RgbImage::from_pixel(size, size, bg);
    let s = size as i64;
    let n_shapes = 1 + (t.busyness * 6.0).round() as usize;
    for _ in 0..n_shapes {
        let col = hsl_rgb(t.hue + rng.random_range(-25.0..25.0), t.saturation, rng.random_range(0.3..0.7));
        let cx = rng.random_range(s / 8..s - s / 8);
        let cy = rng.random_range(s / 8..s - s / 8);
        let r = rng.random_range(s / 16..s / 4);
        let disc = rng.random_bool(0.5);
        for y in (cy - r).max(0)..(cy + r).min(s) {
            for x in (cx - r).max(0)..(cx + r).min(s) {
                let inside = !disc || (x - cx).pow(2) + (y - cy).pow(2) <= r * r;
                if inside {
                    img.put_pixel(x as u32, y as u32, col);
                }
            }
        }
    }
    let n_strokes = (t.busyness * 12.0).round() as usize;
    for _ in 0..n_strokes {
        let col = hsl_rgb(t.hue + 90.0, t.saturation * 0.5, rng.random_range(0.05..0.95));
        let (x0, y0) = (rng.random_range(0..s), rng.random_range(0..s));
        let (x1, y1) = (rng.random_range(0..s), rng.random_range(0..s));
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for k in 0..=steps {
            let x = x0 + (x1 - x0) * k / steps;
            let y = y0 + (y1 - y0) * k / steps;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
                if x + dx < s && y + dy < s {
                    img.put_pixel((x + dx) as u32, (y + dy) as u32, col);
                }
            }
        }
    }
    img
}

pub fn corpus_traits(spec: &CorpusSpec) -> Vec<NftTraits> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let mut out = Vec::new();
    for c in 0..spec.n_collections {
        let base_hue = 360.0 * c as f64 / spec.n_collections as f64;
        let base_sat: f64 = rng.random_range(0.2..0.8);
        for i in 0..spec.nfts_per_collection {
            out.push(NftTraits {
                nft_id: format!("G{c:02}N{i:03}"),
                collection_code: format!("GEN{c:02}"),
                saturation: (base_sat + 0.25 * normal(&mut rng)).clamp(0.02, 1.0),
                busyness: rng.random_range(0.0..1.0),
                hue: (base_hue + 20.0 * normal(&mut rng)).rem_euclid(360.0),
            });
        }
    }
    out
}

fn days(from: NaiveDate, to: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    from.iter_days().take_while(move |d| *d < to)
}

fn standardized(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter().map(|x| (x - m) / sd).collect()
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes the corpus into `dir`; output bytes depend only on `spec`.
pub fn write_corpus(spec: &CorpusSpec, dir: &Path, exec: Exec) -> Result<Vec<NftTraits>> {
    if spec.n_collections == 0 || spec.nfts_per_collection == 0 || spec.trades_per_nft.0 == 0 {
        return Err(Error::invalid("corpus spec counts must be >= 1"));
    }
    if spec.trades_per_nft.0 > spec.trades_per_nft.1 || spec.image_size < 32 {
        return Err(Error::invalid("corpus spec needs an ordered trade range and images of at least 32 px"));
    }
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let traits = corpus_traits(spec);

    let saved = map_slice(exec, &traits, |t| {
        let img = draw(t, spec.image_size, derive_seed(spec.seed, hash_str(&t.nft_id)));
        let path = img_dir.join(format!("{}.png", t.nft_id));
        img.save(&path).map_err(|e| Error::Image { image_id: t.nft_id.clone(), message: e.to_string() })
    });
    saved.into_iter().collect::<Result<Vec<()>>>()?;

    let cycles = CycleTable::reference();
    let (start, end) = cycles.window();
    write_text(&dir.join("cycles.toml"), &cycles.to_toml_string())?;

    // market series, starting a month early so forward-fill always succeeds
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 2));
    let pre = start - Days::new(31);
    let mut eth = 750.0f64;
    let mut fg = 50.0f64;
    let mut rates = String::from("date,ethusd\n");
    let mut controls =
        String::from("date,eth_return,btc_return,sol_return,sp500_return,nasdaq_return,fear_greed\n");
    let mut eth_ret = std::collections::BTreeMap::new();
    for d in days(pre, end) {
        let market = 0.03 * normal(&mut rng);
        let r_eth = market + 0.01 * normal(&mut rng);
        eth *= r_eth.exp();
        let r_btc = 0.8 * market + 0.012 * normal(&mut rng);
        let r_sol = 1.3 * market + 0.03 * normal(&mut rng);
        let r_sp = 0.2 * market + 0.008 * normal(&mut rng);
        let r_nq = 0.25 * market + 0.01 * normal(&mut rng);
        fg = (fg + 40.0 * market + 3.0 * normal(&mut rng)).clamp(0.0, 100.0);
        writeln!(rates, "{d},{eth:.6}").expect("string write");
        writeln!(
            controls,
            "{d},{:.8},{:.8},{:.8},{:.8},{:.8},{}",
            r_eth.exp_m1(),
            r_btc.exp_m1(),
            r_sol.exp_m1(),
            r_sp.exp_m1(),
            r_nq.exp_m1(),
            fg.round()
        )
        .expect("string write");
        eth_ret.insert(d, (r_eth.exp_m1(), eth));
    }
    write_text(&dir.join("ethusd.csv"), &rates)?;
    write_text(&dir.join("controls.csv"), &controls)?;

    // trades
    let sat_z = standardized(&traits.iter().map(|t| t.saturation).collect::<Vec<_>>());
    let busy_z = standardized(&traits.iter().map(|t| t.busyness).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 3));
    let coll_eff: Vec<f64> = (0..spec.n_collections).map(|_| 0.6 * normal(&mut rng)).collect();
    let n_days = (end - start).num_days() as u64;
    let mut tx = String::from("nft_id,collection_code,date,price_eth\n");
    for (i, t) in traits.iter().enumerate() {
        let u = 0.5 * normal(&mut rng);
        let n = rng.random_range(spec.trades_per_nft.0..=spec.trades_per_nft.1);
        let mut dates: Vec<NaiveDate> = (0..n).map(|_| start + Days::new(rng.random_range(0..n_days))).collect();
        dates.sort();
        for d in dates {
            let cycle = cycles.cycle_of(d).expect("date inside window");
            let boom = if (5..=7).contains(&cycle) { spec.saturation_boom } else { 0.0 };
            let (r_eth, rate) = eth_ret[&d];
            let y = 6.5
                + (spec.saturation_effect + boom) * sat_z[i]
                + spec.busyness_effect * busy_z[i]
                + coll_eff[i / spec.nfts_per_collection]
                + u
                + 2.0 * r_eth
                + 0.05 * (cycle as f64 - 5.5)
                + 0.6 * normal(&mut rng);
            let usd = y.exp_m1();
            writeln!(tx, "{},{},{d},{:.10}", t.nft_id, t.collection_code, usd / rate).expect("string write");
        }
    }
    write_text(&dir.join("transactions.csv"), &tx)?;

    // embeddings: random linear maps of the traits plus noise
    for (k, (file, dim)) in [("cnn_embeddings.csv", spec.cnn_dim), ("style_embeddings.csv", spec.style_dim)]
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 10 + k as u64));
        let load: Vec<[f64; 4]> = (0..dim).map(|_| [0; 4].map(|_| normal(&mut rng))).collect();
        let mut s = String::from("image_id");
        for j in 0..dim {
            write!(s, ",v{j}").expect("string write");
        }
        s.push('\n');
        for (i, t) in traits.iter().enumerate() {
            let h = t.hue.to_radians();
            let f = [sat_z[i], busy_z[i], h.cos(), h.sin()];
            s.push_str(&t.nft_id);
            for l in &load {
                let v: f64 = l.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + 0.3 * normal(&mut rng);
                write!(s, ",{v:.8}").expect("string write");
            }
            s.push('\n');
        }
        write_text(&dir.join(file), &s)?;
    }
    Ok(traits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsl_primaries() {
        assert_eq!(hsl_rgb(0.0, 1.0, 0.5), Rgb([255, 0, 0]));
        assert_eq!(hsl_rgb(120.0, 1.0, 0.5), Rgb([0, 255, 0]));
        assert_eq!(hsl_rgb(240.0, 1.0, 0.5), Rgb([0, 0, 255]));
        assert_eq!(hsl_rgb(77.0, 0.0, 0.5), Rgb([128, 128, 128]));
    }

    #[test]
    fn traits_are_deterministic() {
        let spec = CorpusSpec { n_collections: 2, nfts_per_collection: 3, ..Default::default() };
        assert_eq!(corpus_traits(&spec), corpus_traits(&spec));
        assert_eq!(corpus_traits(&spec).len(), 6);
    }
}
