//! Procedural fixture images with analytically known descriptor values.
//!
//! Truth values come from closed forms or from the small per-pixel helpers in
//! this file; nothing here calls into `imgfeat`.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FIXTURE_SIZE: u32 = 224;

/// Pseudo-feature carrying the 1-based index of the expected dominant FFT band.
pub const DOMINANT_BAND: &str = "TEXTURE_FFT_DOMINANT_BAND";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthKind {
    /// Exact by construction.
    Trivial,
    /// From a pixel loop or a closed form, compared within `tol`.
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthValue {
    pub image_id: String,
    pub feature: String,
    pub value: f64,
    pub tol: f64,
    pub kind: TruthKind,
}

#[derive(Debug, Clone)]
pub struct ImageFixture {
    pub id: String,
    pub image: RgbImage,
    pub truth: Vec<TruthValue>,
    /// Whether the image is already on the canonical frame.
    pub canonical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSpec {
    /// Also emit a few fixtures drawn at 448 x 448 that go through preprocessing.
    pub include_preprocess_suite: bool,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self { include_preprocess_suite: true }
    }
}

const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRAY: Rgb<u8> = Rgb([128, 128, 128]);

/// HLS lightness and saturation in [0, 1], written out from the textbook
/// definition.
fn hls_ls(p: [u8; 3]) -> (f64, f64) {
    let r = p.map(|c| f64::from(c) / 255.0);
    let hi = r[0].max(r[1]).max(r[2]);
    let lo = r[0].min(r[1]).min(r[2]);
    let l = (hi + lo) / 2.0;
    if hi == lo {
        return (l, 0.0);
    }
    let s = if l <= 0.5 { (hi - lo) / (hi + lo) } else { (hi - lo) / (2.0 - hi - lo) };
    (l, s)
}

struct Builder {
    id: String,
    image: RgbImage,
    truth: Vec<TruthValue>,
    canonical: bool,
}

impl Builder {
    fn new(id: &str, image: RgbImage) -> Self {
        let canonical = image.dimensions() == (FIXTURE_SIZE, FIXTURE_SIZE);
        Self { id: id.to_string(), image, truth: Vec::new(), canonical }
    }

    fn exact(mut self, feature: &str, value: f64) -> Self {
        self.push(feature, value, 0.0, TruthKind::Trivial);
        self
    }

    fn near(mut self, feature: &str, value: f64, tol: f64) -> Self {
        self.push(feature, value, tol, TruthKind::Derived);
        self
    }

    fn push(&mut self, feature: &str, value: f64, tol: f64, kind: TruthKind) {
        self.truth.push(TruthValue { image_id: self.id.clone(), feature: feature.to_string(), value, tol, kind });
    }

    fn done(self) -> ImageFixture {
        ImageFixture { id: self.id, image: self.image, truth: self.truth, canonical: self.canonical }
    }
}

fn canvas(f: impl Fn(u32, u32) -> Rgb<u8>) -> RgbImage {
    RgbImage::from_fn(FIXTURE_SIZE, FIXTURE_SIZE, f)
}

/// Population mean and SD of HLS lightness over all pixels.
fn lightness_moments(img: &RgbImage) -> (f64, f64) {
    let n = f64::from(img.width() * img.height());
    let (mut s, mut s2) = (0.0, 0.0);
    for p in img.pixels() {
        let l = hls_ls(p.0).0;
        s += l;
        s2 += l * l;
    }
    let m = s / n;
    (m, (s2 / n - m * m).max(0.0).sqrt())
}

/// Central-half over whole-canvas ratio of mean HLS saturation.
fn focus_saturation(img: &RgbImage) -> f64 {
    let (w, h) = img.dimensions();
    let (mut inner, mut n_inner, mut all) = (0.0, 0.0, 0.0);
    for (x, y, p) in img.enumerate_pixels() {
        let s = hls_ls(p.0).1;
        all += s;
        if x >= w / 4 && x < w - w / 4 && y >= h / 4 && y < h - h / 4 {
            inner += s;
            n_inner += 1.0;
        }
    }
    let eps = 1e-6;
    (inner / n_inner).max(eps) / (all / f64::from(w * h)).max(eps)
}

fn solid_gray() -> ImageFixture {
    let img = canvas(|_, _| GRAY);
    Builder::new("solid_gray_808080", img)
        .exact("COLOR_SATURATION_MEAN", 0.0)
        .exact("COLOR_SATURATION_STD", 0.0)
        .exact("COLOR_LIGHTNESS_DISTRIBUTION", 0.0)
        .exact("COLOR_CONTRAST_RANGE", 0.0)
        .near("COLOR_LIGHTNESS_MEAN", 128.0 / 255.0, 1e-12)
        .exact("COMPOSITION_FOCUS_HUE", 1.0)
        .exact("COMPOSITION_FOCUS_LIGHTNESS", 1.0)
        .exact("COMPOSITION_FOCUS_SATURATION", 1.0)
        .exact("EDGE_COVERAGE", 0.0)
        .exact("EDGE_BOUNDING_BOX_AREA", 0.0)
        .exact("EDGE_SOBEL_MEAN", 0.0)
        .exact("PALETTE_SHARE_1", 1.0)
        .exact("PALETTE_SHARE_2", 0.0)
        .exact("PALETTE_SATURATION_MEAN", 0.0)
        .exact("PALETTE_LAB_COLORFULNESS", 0.0)
        .exact("LINEART_PROPORTION_CURVED", 0.0)
        .exact("TEXTURE_FFT_DEGENERATE", 1.0)
        // every neighbour equals the centre: all eight comparison bits set
        .exact("TEXTURE_LBP_8", 1.0)
        .done()
}

fn solid_red() -> ImageFixture {
    Builder::new("solid_red", canvas(|_, _| Rgb([255, 0, 0])))
        .exact("COLOR_HUE_MEAN", 0.0)
        .exact("COLOR_MOST_FREQUENT_HUE", 0.0)
        .exact("COLOR_MOST_FREQUENT_HUE_SHARE", 1.0)
        .exact("COLOR_HUE_DISTRIBUTION", 0.0)
        .exact("COLOR_SATURATION_MEAN", 1.0)
        .exact("COLOR_LIGHTNESS_MEAN", 0.5)
        .exact("COMPOSITION_FOCUS_SATURATION", 1.0)
        .exact("PALETTE_SHARE_1", 1.0)
        .exact("EDGE_COVERAGE", 0.0)
        .done()
}

fn split_black_white() -> ImageFixture {
    let img = canvas(|x, _| if x < FIXTURE_SIZE / 2 { BLACK } else { WHITE });
    let (m, sd) = lightness_moments(&img);
    Builder::new("split_black_white", img)
        .exact("COLOR_CONTRAST_RANGE", 1.0)
        .exact("COLOR_SATURATION_MEAN", 0.0)
        .near("COLOR_LIGHTNESS_MEAN", m, 1e-12)
        .near("COLOR_LIGHTNESS_DISTRIBUTION", sd, 1e-12)
        .near("PALETTE_SHARE_1", 0.5, 0.02)
        .near("PALETTE_SHARE_2", 0.5, 0.02)
        .near("PALETTE_SHARE_3", 0.0, 0.02)
        // Lab distance between sRGB white (L* = 100) and black (L* = 0)
        .near("PALETTE_MEAN_DELTA_E", 100.0, 0.05)
        // a single vertical boundary: edges span the full height, one column wide
        .near("EDGE_RANGE_Y", 1.0, 2.0 / 224.0)
        .near("EDGE_RANGE_X", 1.0 / 224.0, 2.0 / 224.0)
        .done()
}

/// White rectangle on a black border of `lo` pixels. Its Canny outline is a
/// closed one-pixel contour, so the box-counting dimension is near 1.
fn border_rect() -> ImageFixture {
    let (lo, hi) = (8u32, 215u32);
    let img = canvas(|x, y| if (lo..=hi).contains(&x) && (lo..=hi).contains(&y) { WHITE } else { BLACK });
    let span = f64::from(hi - lo + 1) / 224.0;
    let tol = 3.0 / 224.0;
    Builder::new("border_rect", img)
        .near("EDGE_RANGE_X", span, tol)
        .near("EDGE_RANGE_Y", span, tol)
        .near("EDGE_BOUNDING_BOX_AREA", span * span, 2.0 * tol)
        .near("LINEART_PROPORTION_CURVED", 0.0, 0.1)
        .near("LINEART_FRACTAL_DIMENSION", 1.0, 0.15)
        .done()
}

/// Two-pixel white ring of radius 48 on black.
fn circle_outline() -> ImageFixture {
    let (c, r) = (111.5f64, 48.0f64);
    let img = canvas(|x, y| {
        let d = (f64::from(x) - c).hypot(f64::from(y) - c);
        if (d - r).abs() <= 1.0 {
            WHITE
        } else {
            BLACK
        }
    });
    let span = (2.0 * r + 2.0) / 224.0;
    Builder::new("circle_outline", img)
        .near("LINEART_PROPORTION_CURVED", 1.0, 0.15)
        .near("LINEART_FRACTAL_DIMENSION", 1.0, 0.15)
        .near("EDGE_RANGE_X", span, 4.0 / 224.0)
        .near("EDGE_RANGE_Y", span, 4.0 / 224.0)
        .done()
}

/// Vertical black/white bars two pixels wide. The square wave's fundamental
/// sits at 0.25 cycles/px and its odd harmonics alias back onto it, so all
/// spectral energy falls in the third of five equal annuli over (0, 0.5].
fn stripes_period_4() -> ImageFixture {
    let img = canvas(|x, _| if x % 4 < 2 { BLACK } else { WHITE });
    let (m, sd) = lightness_moments(&img);
    Builder::new("stripes_period_4", img)
        .exact(DOMINANT_BAND, 3.0)
        .near("COLOR_LIGHTNESS_MEAN", m, 1e-12)
        .near("COLOR_LIGHTNESS_DISTRIBUTION", sd, 1e-12)
        .near("PALETTE_SHARE_1", 0.5, 0.02)
        .near("PALETTE_SHARE_2", 0.5, 0.02)
        .exact("TEXTURE_FFT_DEGENERATE", 0.0)
        .done()
}

/// Saturated square on a neutral gray field; partly inside the central crop.
fn center_patch() -> ImageFixture {
    let img = canvas(|x, y| {
        if (70..154).contains(&x) && (70..154).contains(&y) {
            Rgb([220, 40, 60])
        } else {
            GRAY
        }
    });
    let f = focus_saturation(&img);
    Builder::new("center_patch", img).near("COMPOSITION_FOCUS_SATURATION", f, 1e-9).done()
}

/// Filled white square covering the middle half of each axis.
fn centered_square() -> ImageFixture {
    let img = canvas(|x, y| if (56..168).contains(&x) && (56..168).contains(&y) { WHITE } else { BLACK });
    let tol = 3.0 / 224.0;
    let f = focus_saturation(&img);
    Builder::new("centered_square", img)
        .near("EDGE_RANGE_X", 0.5, tol)
        .near("EDGE_RANGE_Y", 0.5, tol)
        .near("EDGE_BOUNDING_BOX_AREA", 0.25, 2.0 * tol)
        .near("COMPOSITION_FOCUS_SATURATION", f, 1e-9)
        .near("PALETTE_SHARE_1", 0.75, 0.02)
        .near("PALETTE_SHARE_2", 0.25, 0.02)
        .done()
}

/// Horizontal white bar, two pixels thick. A one-pixel bar would give two
/// parallel edge rows, which inflates the box count at the finest scale.
fn straight_line() -> ImageFixture {
    let img = canvas(|x, y| if (16..208).contains(&x) && (111..113).contains(&y) { WHITE } else { BLACK });
    Builder::new("straight_line", img)
        .near("LINEART_PROPORTION_CURVED", 0.0, 0.1)
        .near("LINEART_FRACTAL_DIMENSION", 1.0, 0.15)
        .near("EDGE_RANGE_X", 192.0 / 224.0, 3.0 / 224.0)
        .done()
}

/// Fixtures drawn at 448 x 448; only values that survive resampling are recorded.
fn preprocess_suite() -> Vec<ImageFixture> {
    let big = |f: &dyn Fn(u32, u32) -> Rgb<u8>| RgbImage::from_fn(448, 448, f);
    vec![
        Builder::new("pre_solid_gray", big(&|_, _| GRAY))
            .exact("COLOR_SATURATION_MEAN", 0.0)
            .exact("COLOR_CONTRAST_RANGE", 0.0)
            .exact("EDGE_COVERAGE", 0.0)
            .exact("PALETTE_SHARE_1", 1.0)
            .done(),
        Builder::new("pre_solid_red", big(&|_, _| Rgb([255, 0, 0])))
            .exact("COLOR_MOST_FREQUENT_HUE", 0.0)
            .exact("COLOR_SATURATION_MEAN", 1.0)
            .done(),
        Builder::new("pre_split_black_white", big(&|x, _| if x < 224 { BLACK } else { WHITE }))
            .exact("COLOR_CONTRAST_RANGE", 1.0)
            .near("COLOR_LIGHTNESS_MEAN", 0.5, 0.01)
            .near("PALETTE_SHARE_1", 0.5, 0.02)
            .near("PALETTE_SHARE_2", 0.5, 0.02)
            .done(),
    ]
}

pub fn gen_images(spec: &ImageSpec) -> Vec<ImageFixture> {
    let mut out = vec![
        solid_gray(),
        solid_red(),
        split_black_white(),
        border_rect(),
        circle_outline(),
        stripes_period_4(),
        center_patch(),
        centered_square(),
        straight_line(),
    ];
    if spec.include_preprocess_suite {
        out.extend(preprocess_suite());
    }
    out
}

/// Writes `images/<id>.png` and `truth.csv` under `dir`.
pub fn write_images(fixtures: &[ImageFixture], dir: &Path) -> Result<()> {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for f in fixtures {
        let path = img_dir.join(format!("{}.png", f.id));
        f.image.save(&path).map_err(|e| Error::Image { image_id: f.id.clone(), message: e.to_string() })?;
    }
    let path = dir.join("truth.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    for t in fixtures.iter().flat_map(|f| &f.truth) {
        w.serialize(t).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthValue>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}
