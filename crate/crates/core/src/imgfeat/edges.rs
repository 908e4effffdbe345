//! Sobel gradients, Canny edge maps and edge-geometry descriptors.

use image::GrayImage;
use serde::{Deserialize, Serialize};

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn rotate180(&self) -> Mask {
        let mut data = self.data.clone();
        data.reverse();
        Mask { width: self.width, height: self.height, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { low: 50.0, high: 150.0 }
    }
}

/// 3x3 Sobel derivatives with replicated borders.
pub fn sobel(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as u32;
        let yc = y.clamp(0, h as isize - 1) as u32;
        f64::from(img.get_pixel(xc, yc).0[0])
    };
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            gy[i] = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Canny edge map on an 8-bit grayscale image.
///
/// No pre-blur; L1 gradient magnitude from the 3x3 Sobel, non-maximum
/// suppression in four direction sectors, and 8-connected hysteresis.
pub fn canny(img: &GrayImage, params: CannyParams) -> Mask {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (gx, gy) = sobel(img);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.abs() + b.abs()).collect();
    let m = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let tan22 = (22.5f64).to_radians().tan();
    let tan67 = (67.5f64).to_radians().tan();
    // 0 = not an edge, 1 = weak candidate, 2 = strong
    let mut state = vec![0u8; w * h];
    let mut stack = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let v = mag[i];
            if v <= params.low {
                continue;
            }
            let ax = gx[i].abs();
            let ay = gy[i].abs();
            let is_max = if ay <= ax * tan22 {
                v > m(x - 1, y) && v >= m(x + 1, y)
            } else if ay > ax * tan67 {
                v > m(x, y - 1) && v >= m(x, y + 1)
            } else if (gx[i] < 0.0) != (gy[i] < 0.0) {
                v > m(x - 1, y + 1) && v > m(x + 1, y - 1)
            } else {
                v > m(x - 1, y - 1) && v > m(x + 1, y + 1)
            };
            if !is_max {
                continue;
            }
            if v > params.high {
                state[i] = 2;
                stack.push((x, y));
            } else {
                state[i] = 1;
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if state[j] == 1 {
                    state[j] = 2;
                    stack.push((nx, ny));
                }
            }
        }
    }
    Mask { width: w, height: h, data: state.iter().map(|&s| s == 2).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeGeometry {
    pub coverage: f64,
    pub bounding_box_area: f64,
    pub range_x: f64,
    pub range_y: f64,
    pub sobel_mean: f64,
    pub sobel_coverage: f64,
}

impl EdgeGeometry {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("EDGE_COVERAGE", self.coverage),
            ("EDGE_BOUNDING_BOX_AREA", self.bounding_box_area),
            ("EDGE_RANGE_X", self.range_x),
            ("EDGE_RANGE_Y", self.range_y),
            ("EDGE_SOBEL_MEAN", self.sobel_mean),
            ("EDGE_SOBEL_COVERAGE", self.sobel_coverage),
        ]
    }
}

/// Normalised horizontal and vertical extents of the edge pixels.
pub fn edge_extents(edges: &Mask) -> (f64, f64) {
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..edges.height {
        for x in 0..edges.width {
            if edges.get(x, y) {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return (0.0, 0.0);
    }
    (
        (x1 - x0 + 1) as f64 / edges.width as f64,
        (y1 - y0 + 1) as f64 / edges.height as f64,
    )
}

/// Edge descriptors from a precomputed Canny map and the grayscale frame.
///
/// Sobel coverage is the fraction of pixels whose L2 gradient magnitude
/// exceeds the Canny high threshold.
pub fn edge_geometry(gray: &GrayImage, edges: &Mask, params: CannyParams) -> EdgeGeometry {
    let (gx, gy) = sobel(gray);
    let n = gx.len() as f64;
    let mags: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let (range_x, range_y) = edge_extents(edges);
    EdgeGeometry {
        coverage: edges.count() as f64 / n,
        bounding_box_area: range_x * range_y,
        range_x,
        range_y,
        sobel_mean: mags.iter().sum::<f64>() / n,
        sobel_coverage: mags.iter().filter(|&&m| m > params.high).count() as f64 / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn blank_image_has_no_edges() {
        let g = GrayImage::from_pixel(64, 64, Luma([90]));
        let e = canny(&g, CannyParams::default());
        assert_eq!(e.count(), 0);
        let geo = edge_geometry(&g, &e, CannyParams::default());
        assert_eq!(geo.coverage, 0.0);
        assert_eq!(geo.bounding_box_area, 0.0);
        assert_eq!((geo.range_x, geo.range_y), (0.0, 0.0));
        assert_eq!(geo.sobel_mean, 0.0);
    }

    #[test]
    fn step_edge_is_one_pixel_wide() {
        let g = GrayImage::from_fn(32, 32, |x, _| Luma([if x < 16 { 0 } else { 255 }]));
        let e = canny(&g, CannyParams::default());
        for y in 0..32 {
            let row: Vec<usize> = (0..32).filter(|&x| e.get(x, y)).collect();
            assert_eq!(row, vec![15], "row {y}");
        }
    }
}
