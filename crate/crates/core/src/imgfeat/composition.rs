//! Central-region versus full-canvas ratios.

use image::RgbImage;

use super::color::rgb_to_hls;

/// Floor applied to both region means before taking the ratio.
pub const FOCUS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionFocus {
    pub hue: f64,
    pub lightness: f64,
    pub saturation: f64,
}

impl CompositionFocus {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("COMPOSITION_FOCUS_HUE", self.hue),
            ("COMPOSITION_FOCUS_LIGHTNESS", self.lightness),
            ("COMPOSITION_FOCUS_SATURATION", self.saturation),
        ]
    }
}

/// Bounds `[x0, x1) x [y0, y1)` of the central crop: the middle half of each axis.
pub fn central_region(width: u32, height: u32) -> (u32, u32, u32, u32) {
    (width / 4, width - width / 4, height / 4, height - height / 4)
}

/// Ratio of the mean HLS channel over the central crop to its mean over the
/// whole canvas.
///
/// Means are accumulated as offsets from a reference pixel so that any uniform
/// image yields exactly `(1, 1, 1)`.
pub fn composition_focus(img: &RgbImage) -> CompositionFocus {
    let (w, h) = img.dimensions();
    let (x0, x1, y0, y1) = central_region(w, h);
    let reference = rgb_to_hls(img.get_pixel(0, 0).0);
    let r = [reference.0, reference.1, reference.2];
    let mut full = [0.0f64; 3];
    let mut center = [0.0f64; 3];
    let mut n_center = 0usize;
    for (x, y, p) in img.enumerate_pixels() {
        let (hh, ll, ss) = rgb_to_hls(p.0);
        let d = [hh - r[0], ll - r[1], ss - r[2]];
        let inside = x >= x0 && x < x1 && y >= y0 && y < y1;
        for k in 0..3 {
            full[k] += d[k];
            if inside {
                center[k] += d[k];
            }
        }
        if inside {
            n_center += 1;
        }
    }
    let n_full = (w * h) as f64;
    let ratio = |k: usize| {
        let c = r[k] + center[k] / n_center as f64;
        let f = r[k] + full[k] / n_full;
        c.max(FOCUS_EPS) / f.max(FOCUS_EPS)
    };
    CompositionFocus { hue: ratio(0), lightness: ratio(1), saturation: ratio(2) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn uniform_images_are_exactly_one() {
        for c in [[0u8, 0, 0], [128, 128, 128], [255, 255, 255], [13, 200, 77], [250, 3, 9]] {
            let img = RgbImage::from_pixel(224, 224, Rgb(c));
            let f = composition_focus(&img);
            assert_eq!((f.hue, f.lightness, f.saturation), (1.0, 1.0, 1.0), "color {c:?}");
        }
    }

    #[test]
    fn central_region_is_middle_half() {
        assert_eq!(central_region(224, 224), (56, 168, 56, 168));
    }

    #[test]
    fn black_center_on_white() {
        let img = RgbImage::from_fn(64, 64, |x, y| {
            if (16..48).contains(&x) && (16..48).contains(&y) {
                Rgb([0, 0, 0])
            } else {
                Rgb([255, 255, 255])
            }
        });
        let f = composition_focus(&img);
        assert!(f.lightness < 1.0);
        assert!((f.lightness - 1e-6 / 0.75).abs() < 1e-12);
    }
}
