//! Line-art descriptors: straight-versus-curved share, stroke thickness and
//! box-counting fractal dimension.

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::edges::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughParams {
    pub rho: f64,
    pub theta_deg: f64,
    pub threshold: u32,
    pub min_line_length: i64,
    pub max_line_gap: i64,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self { rho: 1.0, theta_deg: 1.0, threshold: 30, min_line_length: 10, max_line_gap: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineArt {
    pub proportion_curved: f64,
    pub average_thickness: f64,
    pub fractal_dimension: f64,
}

impl LineArt {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("LINEART_PROPORTION_CURVED", self.proportion_curved),
            ("LINEART_AVERAGE_THICKNESS", self.average_thickness),
            ("LINEART_FRACTAL_DIMENSION", self.fractal_dimension),
        ]
    }
}

/// Progressive probabilistic Hough transform.
///
/// Edge points are visited in a seeded random order; each point votes, and
/// once a bin passes the threshold the supporting line is walked in both
/// directions (tolerating `max_line_gap` misses), its pixels are removed from
/// the mask and, for segments of at least `min_line_length`, their votes are
/// withdrawn.
pub fn hough_segments(edges: &Mask, params: HoughParams, seed: u64) -> Vec<Segment> {
    let (w, h) = (edges.width as i64, edges.height as i64);
    let theta = params.theta_deg.to_radians();
    let irho = 1.0 / params.rho;
    let numangle = (std::f64::consts::PI / theta).round() as usize;
    let numrho = (((w + h) * 2 + 1) as f64 / params.rho).round() as i64;
    let trig: Vec<(f64, f64)> =
        (0..numangle).map(|n| ((n as f64 * theta).cos() * irho, (n as f64 * theta).sin() * irho)).collect();
    let mut accum = vec![0i32; numangle * numrho as usize];
    let mut mask = edges.data.clone();
    let mut points: Vec<(i64, i64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[(y * w + x) as usize] {
                points.push((x, y));
            }
        }
    }
    let rho_idx = |x: i64, y: i64, n: usize| -> usize {
        let r = (x as f64 * trig[n].0 + y as f64 * trig[n].1).round() as i64 + (numrho - 1) / 2;
        n * numrho as usize + r as usize
    };
    const SHIFT: i32 = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    let mut count = points.len();
    while count > 0 {
        let idx = rng.random_range(0..count);
        let (j, i) = points[idx];
        points[idx] = points[count - 1];
        count -= 1;
        if !mask[(i * w + j) as usize] {
            continue;
        }
        let mut max_val = params.threshold as i32 - 1;
        let mut max_n = 0usize;
        for n in 0..numangle {
            let k = rho_idx(j, i, n);
            accum[k] += 1;
            if accum[k] > max_val {
                max_val = accum[k];
                max_n = n;
            }
        }
        if max_val < params.threshold as i32 {
            continue;
        }
        let a = -trig[max_n].1;
        let b = trig[max_n].0;
        let (mut x0, mut y0) = (j, i);
        let (dx0, dy0, xflag);
        if a.abs() > b.abs() {
            xflag = true;
            dx0 = if a > 0.0 { 1 } else { -1 };
            dy0 = (b * f64::from(1 << SHIFT) / a.abs()).round() as i64;
            y0 = (y0 << SHIFT) + (1 << (SHIFT - 1));
        } else {
            xflag = false;
            dy0 = if b > 0.0 { 1 } else { -1 };
            dx0 = (a * f64::from(1 << SHIFT) / b.abs()).round() as i64;
            x0 = (x0 << SHIFT) + (1 << (SHIFT - 1));
        }
        let unpack = |x: i64, y: i64| if xflag { (x, y >> SHIFT) } else { (x >> SHIFT, y) };
        let mut line_end = [(j, i); 2];
        for (k, end) in line_end.iter_mut().enumerate() {
            let (dx, dy) = if k == 0 { (dx0, dy0) } else { (-dx0, -dy0) };
            let (mut x, mut y) = (x0, y0);
            let mut gap = 0;
            loop {
                let (j1, i1) = unpack(x, y);
                if j1 < 0 || j1 >= w || i1 < 0 || i1 >= h {
                    break;
                }
                if mask[(i1 * w + j1) as usize] {
                    gap = 0;
                    *end = (j1, i1);
                } else {
                    gap += 1;
                    if gap > params.max_line_gap {
                        break;
                    }
                }
                x += dx;
                y += dy;
            }
        }
        let good = (line_end[1].0 - line_end[0].0).abs() >= params.min_line_length
            || (line_end[1].1 - line_end[0].1).abs() >= params.min_line_length;
        for (k, end) in line_end.iter().enumerate() {
            let (dx, dy) = if k == 0 { (dx0, dy0) } else { (-dx0, -dy0) };
            let (mut x, mut y) = (x0, y0);
            loop {
                let (j1, i1) = unpack(x, y);
                let m = (i1 * w + j1) as usize;
                if mask[m] {
                    if good {
                        for n in 0..numangle {
                            accum[rho_idx(j1, i1, n)] -= 1;
                        }
                    }
                    mask[m] = false;
                }
                if (j1, i1) == *end {
                    break;
                }
                x += dx;
                y += dy;
            }
        }
        if good {
            lines.push(Segment { x0: line_end[0].0, y0: line_end[0].1, x1: line_end[1].0, y1: line_end[1].1 });
        }
    }
    lines
}

/// Pixels of a segment by Bresenham rasterisation.
fn raster(s: &Segment, mut visit: impl FnMut(i64, i64)) {
    let (mut x, mut y) = (s.x0, s.y0);
    let dx = (s.x1 - s.x0).abs();
    let dy = -(s.y1 - s.y0).abs();
    let sx = if s.x0 < s.x1 { 1 } else { -1 };
    let sy = if s.y0 < s.y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        visit(x, y);
        if x == s.x1 && y == s.y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Share of edge pixels not within one pixel (8-neighbourhood) of a
/// detected straight segment.
pub fn proportion_curved(edges: &Mask, segments: &[Segment]) -> f64 {
    let total = edges.count();
    if total == 0 {
        return 0.0;
    }
    let (w, h) = (edges.width as i64, edges.height as i64);
    let mut near = vec![false; edges.data.len()];
    for s in segments {
        raster(s, |x, y| {
            for yy in (y - 1).max(0)..=(y + 1).min(h - 1) {
                for xx in (x - 1).max(0)..=(x + 1).min(w - 1) {
                    near[(yy * w + xx) as usize] = true;
                }
            }
        });
    }
    let covered = edges.data.iter().zip(&near).filter(|(e, n)| **e && **n).count();
    1.0 - covered as f64 / total as f64
}

/// Otsu threshold over an 8-bit histogram (largest between-class variance,
/// first maximum).
pub fn otsu_threshold(gray: &GrayImage) -> u8 {
    let mut hist = [0f64; 256];
    for p in gray.pixels() {
        hist[p.0[0] as usize] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, c)| i as f64 * c).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let mut best = (0u8, -1.0);
    for t in 0..256 {
        w0 += hist[t];
        sum0 += t as f64 * hist[t];
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best.1 {
            best = (t as u8, between);
        }
    }
    best.0
}

/// Stroke mask: the minority side of the Otsu split (the dark side on ties).
/// Empty for constant images.
pub fn stroke_mask(gray: &GrayImage) -> Mask {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let first = gray.get_pixel(0, 0).0[0];
    if gray.pixels().all(|p| p.0[0] == first) {
        return Mask::new(w, h);
    }
    let t = otsu_threshold(gray);
    let dark = gray.pixels().filter(|p| p.0[0] <= t).count();
    let dark_is_stroke = dark * 2 <= w * h;
    Mask::from_fn(w, h, |x, y| (gray.get_pixel(x as u32, y as u32).0[0] <= t) == dark_is_stroke)
}

/// Exact 1-D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut started = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !started {
            v[0] = q;
            started = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !started {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel, treating everything outside the image as background.
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    let (w, h) = (mask.width + 2, mask.height + 2);
    let mut g = vec![0f64; w * h];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                g[(y + 1) * w + x + 1] = f64::INFINITY;
            }
        }
    }
    let mut col = vec![0f64; h];
    let mut out = vec![0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = g[y * w + x];
        }
        edt_1d(&col, &mut out);
        for y in 0..h {
            g[y * w + x] = out[y];
        }
    }
    let mut row = vec![0f64; w];
    let mut rout = vec![0f64; w];
    for y in 0..h {
        row.copy_from_slice(&g[y * w..(y + 1) * w]);
        edt_1d(&row, &mut rout);
        g[y * w..(y + 1) * w].copy_from_slice(&rout);
    }
    let mut d = vec![0f64; mask.width * mask.height];
    for y in 0..mask.height {
        for x in 0..mask.width {
            d[y * mask.width + x] = g[(y + 1) * w + x + 1].sqrt();
        }
    }
    d
}

/// Twice the mean distance-transform value over the stroke pixels.
pub fn average_thickness(stroke: &Mask) -> f64 {
    let n = stroke.count();
    if n == 0 {
        return 0.0;
    }
    let d = distance_transform(stroke);
    let s: f64 = d.iter().zip(&stroke.data).filter(|(_, m)| **m).map(|(v, _)| *v).sum();
    2.0 * s / n as f64
}

pub const BOX_SIZES: [usize; 6] = [2, 4, 8, 16, 32, 64];

/// Number of `s`-sized grid boxes (anchored at the origin) containing at
/// least one foreground pixel.
pub fn box_count(mask: &Mask, s: usize) -> usize {
    let bw = mask.width.div_ceil(s);
    let bh = mask.height.div_ceil(s);
    let mut hit = vec![false; bw * bh];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                hit[(y / s) * bw + x / s] = true;
            }
        }
    }
    hit.iter().filter(|&&b| b).count()
}

/// Box-counting dimension: least-squares slope of `ln N(s)` on `ln(1/s)`.
/// Zero for an empty mask.
pub fn fractal_dimension(mask: &Mask) -> f64 {
    if mask.count() == 0 {
        return 0.0;
    }
    let pts: Vec<(f64, f64)> =
        BOX_SIZES.iter().map(|&s| ((1.0 / s as f64).ln(), (box_count(mask, s) as f64).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn line_art(gray: &GrayImage, edges: &Mask, params: HoughParams, seed: u64) -> LineArt {
    if edges.count() == 0 {
        return LineArt { proportion_curved: 0.0, average_thickness: 0.0, fractal_dimension: 0.0 };
    }
    let segs = hough_segments(edges, params, seed);
    LineArt {
        proportion_curved: proportion_curved(edges, &segs),
        average_thickness: average_thickness(&stroke_mask(gray)),
        fractal_dimension: fractal_dimension(edges),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_dt(mask: &Mask) -> Vec<f64> {
        let (w, h) = (mask.width as i64, mask.height as i64);
        let mut out = vec![0.0; mask.data.len()];
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x as usize, y as usize) {
                    continue;
                }
                let mut best = f64::INFINITY;
                for yy in -1..=h {
                    for xx in -1..=w {
                        let bg = xx < 0 || yy < 0 || xx >= w || yy >= h || !mask.get(xx as usize, yy as usize);
                        if bg {
                            best = best.min((((xx - x).pow(2) + (yy - y).pow(2)) as f64).sqrt());
                        }
                    }
                }
                out[(y * w + x) as usize] = best;
            }
        }
        out
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let m = Mask::from_fn(13, 9, |x, y| (x * 3 + y * 5) % 7 != 0 && x > 1 && y < 8);
        let fast = distance_transform(&m);
        let slow = brute_dt(&m);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn solid_block_has_dimension_two() {
        let m = Mask::from_fn(224, 224, |x, y| (64..192).contains(&x) && (64..192).contains(&y));
        assert!((fractal_dimension(&m) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn straight_row_is_one_segment() {
        let m = Mask::from_fn(64, 64, |x, y| y == 20 && (5..60).contains(&x));
        let segs = hough_segments(&m, HoughParams::default(), 3);
        assert_eq!(segs.len(), 1);
        assert_eq!(proportion_curved(&m, &segs), 0.0);
    }

    #[test]
    fn empty_edges_give_zeros() {
        let g = GrayImage::new(32, 32);
        let la = line_art(&g, &Mask::new(32, 32), HoughParams::default(), 0);
        assert_eq!(la.named().iter().map(|p| p.1).sum::<f64>(), 0.0);
    }
}
