//! Color-space conversions and global color statistics.

use image::RgbImage;

/// HLS with hue in degrees `[0, 360)` and lightness/saturation in `[0, 1]`.
/// Achromatic pixels get hue 0.
pub fn rgb_to_hls(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| f64::from(c) / 255.0);
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let l = (mx + mn) / 2.0;
    let d = mx - mn;
    if d == 0.0 {
        return (0.0, l, 0.0);
    }
    let s = if l <= 0.5 { d / (mx + mn) } else { d / (2.0 - mx - mn) };
    (hue_degrees(r, g, b, mx, d), l, s)
}

/// HSV with hue in degrees and saturation/value in `[0, 1]`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| f64::from(c) / 255.0);
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let d = mx - mn;
    if d == 0.0 {
        return (0.0, 0.0, mx);
    }
    (hue_degrees(r, g, b, mx, d), d / mx, mx)
}

/// Same as [`rgb_to_hsv`] for real-valued RGB in `[0, 255]`.
pub fn rgbf_to_hsv(rgb: [f64; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(|c| c / 255.0);
    let mx = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let d = mx - mn;
    if d <= 0.0 || mx <= 0.0 {
        return (0.0, 0.0, mx);
    }
    (hue_degrees(r, g, b, mx, d), d / mx, mx)
}

fn hue_degrees(r: f64, g: f64, b: f64, mx: f64, d: f64) -> f64 {
    let h = if mx == r {
        60.0 * (g - b) / d
    } else if mx == g {
        60.0 * (b - r) / d + 120.0
    } else {
        60.0 * (r - g) / d + 240.0
    };
    let h = h.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// sRGB (D65) to CIE L*a*b*.
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(|c| {
        let c = f64::from(c) / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    });
    let x = 0.412_456_4 * lin[0] + 0.357_576_1 * lin[1] + 0.180_437_5 * lin[2];
    let y = 0.212_672_9 * lin[0] + 0.715_152_2 * lin[1] + 0.072_175_0 * lin[2];
    let z = 0.019_333_9 * lin[0] + 0.119_192_0 * lin[1] + 0.950_304_1 * lin[2];
    let f = |t: f64| {
        let d = 6.0 / 29.0;
        if t > d * d * d {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.950_47), f(y), f(z / 1.088_83));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Luma as used for 8-bit grayscale conversion (BT.601 weights, rounded).
pub fn gray(rgb: [u8; 3]) -> u8 {
    let v = 0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2]);
    v.round().clamp(0.0, 255.0) as u8
}

pub fn to_gray(img: &RgbImage) -> image::GrayImage {
    image::GrayImage::from_fn(img.width(), img.height(), |x, y| image::Luma([gray(img.get_pixel(x, y).0)]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorStats {
    pub hue_mean: f64,
    pub hue_std: f64,
    pub lightness_mean: f64,
    /// Lightness SD (distribution width).
    pub lightness_distribution: f64,
    pub saturation_mean: f64,
    pub saturation_std: f64,
    /// Circular SD of hue in degrees (distribution width on the color wheel).
    pub hue_distribution: f64,
    /// Lower edge of the modal bin of a 360-bin hue histogram, degrees.
    pub most_frequent_hue: f64,
    pub most_frequent_hue_share: f64,
    /// `max - min` lightness.
    pub contrast_range: f64,
}

impl ColorStats {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("COLOR_HUE_MEAN", self.hue_mean),
            ("COLOR_HUE_STD", self.hue_std),
            ("COLOR_LIGHTNESS_MEAN", self.lightness_mean),
            ("COLOR_LIGHTNESS_DISTRIBUTION", self.lightness_distribution),
            ("COLOR_SATURATION_MEAN", self.saturation_mean),
            ("COLOR_SATURATION_STD", self.saturation_std),
            ("COLOR_HUE_DISTRIBUTION", self.hue_distribution),
            ("COLOR_MOST_FREQUENT_HUE", self.most_frequent_hue),
            ("COLOR_MOST_FREQUENT_HUE_SHARE", self.most_frequent_hue_share),
            ("COLOR_CONTRAST_RANGE", self.contrast_range),
        ]
    }
}

/// Mean and population SD, accumulated as offsets from the first value so a
/// constant channel gives exactly `(v, 0)`.
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let r = v[0];
    let m = r + v.iter().map(|x| x - r).sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn color_stats(img: &RgbImage) -> ColorStats {
    let n = (img.width() * img.height()) as usize;
    let mut h = Vec::with_capacity(n);
    let mut l = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut hist = [0usize; 360];
    let (mut cs, mut sn) = (0.0, 0.0);
    for p in img.pixels() {
        let (hh, ll, ss) = rgb_to_hls(p.0);
        h.push(hh);
        l.push(ll);
        s.push(ss);
        hist[(hh.floor() as usize).min(359)] += 1;
        let rad = hh.to_radians();
        cs += rad.cos();
        sn += rad.sin();
    }
    let (hue_mean, hue_std) = mean_sd(&h);
    let (lightness_mean, lightness_distribution) = mean_sd(&l);
    let (saturation_mean, saturation_std) = mean_sd(&s);
    let r = ((cs / n as f64).powi(2) + (sn / n as f64).powi(2)).sqrt();
    let hue_distribution = if r >= 1.0 { 0.0 } else { (-2.0 * r.max(1e-12).ln()).sqrt().to_degrees() };
    let (mode, count) = hist
        .iter()
        .enumerate()
        .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best });
    let lmax = l.iter().copied().fold(f64::MIN, f64::max);
    let lmin = l.iter().copied().fold(f64::MAX, f64::min);
    ColorStats {
        hue_mean,
        hue_std,
        lightness_mean,
        lightness_distribution,
        saturation_mean,
        saturation_std,
        hue_distribution,
        most_frequent_hue: mode as f64,
        most_frequent_hue_share: count as f64 / n as f64,
        contrast_range: lmax - lmin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn conversions_on_primaries() {
        assert_eq!(rgb_to_hls([255, 0, 0]), (0.0, 0.5, 1.0));
        let (h, l, s) = rgb_to_hls([0, 0, 255]);
        assert_eq!((h, l, s), (240.0, 0.5, 1.0));
        assert_eq!(rgb_to_hls([128, 128, 128]).2, 0.0);
        assert_eq!(rgb_to_hsv([0, 255, 0]), (120.0, 1.0, 1.0));
        let w = rgb_to_lab([255, 255, 255]);
        assert!((w[0] - 100.0).abs() < 1e-3 && w[1].abs() < 0.05 && w[2].abs() < 0.05);
        assert_eq!(rgb_to_lab([0, 0, 0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_gray() {
        let img = RgbImage::from_pixel(32, 32, Rgb([128, 128, 128]));
        let c = color_stats(&img);
        assert_eq!(c.saturation_mean, 0.0);
        assert_eq!(c.lightness_distribution, 0.0);
        assert_eq!(c.contrast_range, 0.0);
    }

    #[test]
    fn pure_red() {
        let img = RgbImage::from_pixel(16, 16, Rgb([255, 0, 0]));
        let c = color_stats(&img);
        assert_eq!(c.most_frequent_hue, 0.0);
        assert_eq!(c.saturation_mean, 1.0);
        assert_eq!(c.most_frequent_hue_share, 1.0);
        assert_eq!(c.hue_distribution, 0.0);
    }

    #[test]
    fn split_black_white_against_pixel_loop() {
        let img = RgbImage::from_fn(40, 20, |x, _| if x < 20 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let c = color_stats(&img);
        assert_eq!(c.contrast_range, 1.0);
        // oracle: two-point distribution at 0 and 1 with equal mass
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for p in img.pixels() {
            let l = (f64::from(*p.0.iter().max().unwrap()) + f64::from(*p.0.iter().min().unwrap())) / 510.0;
            acc += l;
            acc2 += l * l;
        }
        let n = 800.0;
        let sd = (acc2 / n - (acc / n).powi(2)).sqrt();
        assert!((c.lightness_distribution - sd).abs() < 1e-12);
        assert!((c.lightness_distribution - 0.5).abs() < 1e-12);
    }
}
