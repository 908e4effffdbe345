//! Dominant-color palette by weighted k-means in Lab space.

use std::collections::BTreeMap;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::color::{rgb_to_lab, rgbf_to_hsv};

pub const PALETTE_K: usize = 6;
const MAX_ITERS: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PaletteSummary {
    /// Cluster pixel shares, descending, zero-padded to `k`.
    pub cluster_shares: Vec<f64>,
    pub saturation_mean: f64,
    pub saturation_std: f64,
    pub value_mean: f64,
    pub value_std: f64,
    pub lab_colorfulness: f64,
    pub mean_delta_e: f64,
    /// Lab centroids of the nonempty clusters, in share order.
    pub centroids: Vec<[f64; 3]>,
}

impl PaletteSummary {
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .cluster_shares
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("PALETTE_SHARE_{}", i + 1), *s))
            .collect();
        out.extend([
            ("PALETTE_SATURATION_MEAN".to_string(), self.saturation_mean),
            ("PALETTE_SATURATION_STD".to_string(), self.saturation_std),
            ("PALETTE_VALUE_MEAN".to_string(), self.value_mean),
            ("PALETTE_VALUE_STD".to_string(), self.value_std),
            ("PALETTE_LAB_COLORFULNESS".to_string(), self.lab_colorfulness),
            ("PALETTE_MEAN_DELTA_E".to_string(), self.mean_delta_e),
        ]);
        out
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(p: &[f64; 3], centers: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Hasler–Süsstrunk colorfulness over all pixels.
pub fn colorfulness(img: &RgbImage) -> f64 {
    let n = f64::from(img.width() * img.height());
    let (mut s_rg, mut s_yb, mut q_rg, mut q_yb) = (0.0, 0.0, 0.0, 0.0);
    for p in img.pixels() {
        let [r, g, b] = p.0.map(f64::from);
        let rg = r - g;
        let yb = 0.5 * (r + g) - b;
        s_rg += rg;
        s_yb += yb;
        q_rg += rg * rg;
        q_yb += yb * yb;
    }
    let (m_rg, m_yb) = (s_rg / n, s_yb / n);
    let v_rg = (q_rg / n - m_rg * m_rg).max(0.0);
    let v_yb = (q_yb / n - m_yb * m_yb).max(0.0);
    (v_rg + v_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt()
}

/// Weighted k-means over the distinct colors of the image.
///
/// k-means++ seeding with a ChaCha8 stream from `seed`; Lloyd iterations stop
/// after 100 rounds or once no centroid moves more than 1e-6. With fewer than
/// `k` distinct colors each color is its own cluster.
pub fn palette_kmeans(img: &RgbImage, k: usize, seed: u64) -> PaletteSummary {
    let mut counts: BTreeMap<[u8; 3], usize> = BTreeMap::new();
    for p in img.pixels() {
        *counts.entry(p.0).or_default() += 1;
    }
    let colors: Vec<[u8; 3]> = counts.keys().copied().collect();
    let weights: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let labs: Vec<[f64; 3]> = colors.iter().map(|&c| rgb_to_lab(c)).collect();
    let total: f64 = weights.iter().sum();

    let assign: Vec<usize>;
    let kk;
    if colors.len() <= k {
        kk = colors.len();
        assign = (0..kk).collect();
    } else {
        kk = k;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers = Vec::with_capacity(k);
        centers.push(labs[weighted_pick(&mut rng, &weights)]);
        let mut d2: Vec<f64> = labs.iter().map(|p| dist2(p, &centers[0])).collect();
        while centers.len() < k {
            let w: Vec<f64> = d2.iter().zip(&weights).map(|(d, w)| d * w).collect();
            let next = labs[weighted_pick(&mut rng, &w)];
            for (d, p) in d2.iter_mut().zip(&labs) {
                *d = d.min(dist2(p, &next));
            }
            centers.push(next);
        }
        let mut a = vec![0usize; labs.len()];
        for _ in 0..MAX_ITERS {
            for (ai, p) in a.iter_mut().zip(&labs) {
                *ai = nearest(p, &centers);
            }
            let mut sums = vec![[0.0f64; 3]; k];
            let mut ws = vec![0.0f64; k];
            for ((p, &ai), &w) in labs.iter().zip(&a).zip(&weights) {
                for c in 0..3 {
                    sums[ai][c] += w * p[c];
                }
                ws[ai] += w;
            }
            let mut shift: f64 = 0.0;
            for j in 0..k {
                if ws[j] > 0.0 {
                    let nc = sums[j].map(|s| s / ws[j]);
                    shift = shift.max(dist2(&nc, &centers[j]).sqrt());
                    centers[j] = nc;
                }
            }
            if shift < SHIFT_TOL {
                break;
            }
        }
        for (ai, p) in a.iter_mut().zip(&labs) {
            *ai = nearest(p, &centers);
        }
        assign = a;
    }

    // per-cluster weight, mean Lab and mean RGB
    let mut ws = vec![0.0f64; kk];
    let mut lab_sum = vec![[0.0f64; 3]; kk];
    let mut rgb_sum = vec![[0.0f64; 3]; kk];
    for (i, &ai) in assign.iter().enumerate() {
        let w = weights[i];
        ws[ai] += w;
        for c in 0..3 {
            lab_sum[ai][c] += w * labs[i][c];
            rgb_sum[ai][c] += w * f64::from(colors[i][c]);
        }
    }
    let mut clusters: Vec<(f64, [f64; 3], [f64; 3])> = (0..kk)
        .filter(|&j| ws[j] > 0.0)
        .map(|j| (ws[j] / total, lab_sum[j].map(|s| s / ws[j]), rgb_sum[j].map(|s| s / ws[j])))
        .collect();
    clusters.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1[0].total_cmp(&b.1[0])));

    let mut shares: Vec<f64> = clusters.iter().map(|c| c.0).collect();
    shares.resize(k, 0.0);
    let hsv: Vec<(f64, f64, f64)> = clusters.iter().map(|c| rgbf_to_hsv(c.2)).collect();
    let wmean = |f: &dyn Fn(&(f64, f64, f64)) -> f64| -> (f64, f64) {
        let m: f64 = clusters.iter().zip(&hsv).map(|(c, h)| c.0 * f(h)).sum();
        let v: f64 = clusters.iter().zip(&hsv).map(|(c, h)| c.0 * (f(h) - m).powi(2)).sum();
        (m, v.max(0.0).sqrt())
    };
    let (saturation_mean, saturation_std) = wmean(&|h| h.1);
    let (value_mean, value_std) = wmean(&|h| h.2);

    let centroids: Vec<[f64; 3]> = clusters.iter().map(|c| c.1).collect();
    let mut de_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            de_sum += dist2(&centroids[i], &centroids[j]).sqrt();
            pairs += 1;
        }
    }
    PaletteSummary {
        cluster_shares: shares,
        saturation_mean,
        saturation_std,
        value_mean,
        value_std,
        lab_colorfulness: colorfulness(img),
        mean_delta_e: if pairs == 0 { 0.0 } else { de_sum / pairs as f64 },
        centroids,
    }
}

fn weighted_pick(rng: &mut ChaCha8Rng, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut t = rng.random::<f64>() * total;
    for (i, &wi) in w.iter().enumerate() {
        if t < wi {
            return i;
        }
        t -= wi;
    }
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}
