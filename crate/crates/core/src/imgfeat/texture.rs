//! Texture descriptors: uniform LBP histogram and radial FFT band energies.

use image::GrayImage;
use rustfft::{num_complex::Complex, FftPlanner};

pub const LBP_BINS: usize = 10;
pub const FFT_BANDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub lbp: [f64; LBP_BINS],
    pub fft_bands: [f64; FFT_BANDS],
    /// Set when the image has no non-DC spectral energy; bands are then 0.2 each.
    pub fft_degenerate: bool,
}

impl Texture {
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            self.lbp.iter().enumerate().map(|(i, v)| (format!("TEXTURE_LBP_{i}"), *v)).collect();
        out.extend(self.fft_bands.iter().enumerate().map(|(i, v)| (format!("TEXTURE_FFT_BAND_{}", i + 1), *v)));
        out.push(("TEXTURE_FFT_DEGENERATE".to_string(), if self.fft_degenerate { 1.0 } else { 0.0 }));
        out
    }
}

// neighbours in circular order starting east, counter-clockwise on screen
const RING: [(i32, i32); 8] = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)];

/// Uniform LBP (8 neighbours, radius 1) histogram over interior pixels.
///
/// Bins 0..=8 count uniform patterns by their number of set bits; bin 9
/// collects every non-uniform pattern. A neighbour sets its bit when it is
/// not darker than the centre.
pub fn lbp_histogram(gray: &GrayImage) -> [f64; LBP_BINS] {
    let (w, h) = (gray.width() as i32, gray.height() as i32);
    let mut hist = [0f64; LBP_BINS];
    if w < 3 || h < 3 {
        hist[8] = 1.0;
        return hist;
    }
    let px = |x: i32, y: i32| gray.get_pixel(x as u32, y as u32).0[0];
    let mut n = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = px(x, y);
            let bits: Vec<bool> = RING.iter().map(|(dx, dy)| px(x + dx, y + dy) >= c).collect();
            let transitions = (0..8).filter(|&i| bits[i] != bits[(i + 1) % 8]).count();
            let bin = if transitions <= 2 { bits.iter().filter(|&&b| b).count() } else { 9 };
            hist[bin] += 1.0;
            n += 1.0;
        }
    }
    hist.map(|c| c / n)
}

/// Band index of a normalised spatial frequency radius in `(0, 0.5]`.
pub fn band_of(radius: f64) -> Option<usize> {
    if radius <= 0.0 || radius > 0.5 {
        return None;
    }
    let width = 0.5 / FFT_BANDS as f64;
    Some(((radius / width).ceil() as usize).clamp(1, FFT_BANDS) - 1)
}

/// Power spectrum shares in five equal-width annuli of normalised radius,
/// DC excluded. Returns `None` when there is no non-DC energy.
pub fn fft_bands(gray: &GrayImage) -> Option<[f64; FFT_BANDS]> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut buf: Vec<Complex<f64>> = gray.pixels().map(|p| Complex::new(f64::from(p.0[0]), 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    let freq = |k: usize, n: usize| -> f64 {
        let k = k as f64;
        let n = n as f64;
        if k <= n / 2.0 {
            k / n
        } else {
            (k - n) / n
        }
    };
    let dc = buf[0].norm_sqr();
    let mut bands = [0f64; FFT_BANDS];
    for v in 0..h {
        for u in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let r = freq(u, w).hypot(freq(v, h));
            if let Some(b) = band_of(r) {
                bands[b] += buf[v * w + u].norm_sqr();
            }
        }
    }
    let total: f64 = bands.iter().sum();
    if total <= 1e-12 * dc.max(1.0) {
        return None;
    }
    Some(bands.map(|e| e / total))
}

pub fn texture(gray: &GrayImage) -> Texture {
    let (fft_bands, fft_degenerate) = match fft_bands(gray) {
        Some(b) => (b, false),
        None => ([1.0 / FFT_BANDS as f64; FFT_BANDS], true),
    };
    Texture { lbp: lbp_histogram(gray), fft_bands, fft_degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn constant_image_is_degenerate() {
        let g = GrayImage::from_pixel(32, 32, Luma([77]));
        let t = texture(&g);
        assert!(t.fft_degenerate);
        assert_eq!(t.fft_bands, [0.2; 5]);
        assert_eq!(t.lbp[8], 1.0);
    }

    #[test]
    fn band_edges_are_right_closed() {
        assert_eq!(band_of(0.1), Some(0));
        assert_eq!(band_of(0.25), Some(2));
        assert_eq!(band_of(0.5), Some(4));
        assert_eq!(band_of(0.0), None);
        assert_eq!(band_of(0.6), None);
    }

    #[test]
    fn single_edge_pattern_is_uniform() {
        // left half dark: pixels on the boundary see a half-ring of brighter neighbours
        let g = GrayImage::from_fn(8, 8, |x, _| Luma([if x < 4 { 0 } else { 200 }]));
        let h = lbp_histogram(&g);
        assert_eq!(h[9], 0.0);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
