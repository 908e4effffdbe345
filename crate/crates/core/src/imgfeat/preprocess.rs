//! Canonical 224 x 224 frame: shorter side to 256 (bilinear), then center crop.

use image::{imageops, RgbImage};

use crate::{Error, Result};

pub const RESIZE_SHORT_SIDE: u32 = 256;
pub const CROP_SIZE: u32 = 224;
pub const MIN_SIDE: u32 = 16;

/// Output size of the aspect-preserving resize.
pub fn resized_dims(width: u32, height: u32) -> (u32, u32) {
    if width <= height {
        let h = (f64::from(height) * f64::from(RESIZE_SHORT_SIDE) / f64::from(width)).round() as u32;
        (RESIZE_SHORT_SIDE, h)
    } else {
        let w = (f64::from(width) * f64::from(RESIZE_SHORT_SIDE) / f64::from(height)).round() as u32;
        (w, RESIZE_SHORT_SIDE)
    }
}

pub fn preprocess(img: &RgbImage, image_id: &str) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::Image {
            image_id: image_id.to_string(),
            message: format!("{w}x{h} is smaller than {MIN_SIDE} px on a side"),
        });
    }
    let (rw, rh) = resized_dims(w, h);
    let resized = if (rw, rh) == (w, h) {
        img.clone()
    } else {
        imageops::resize(img, rw, rh, imageops::FilterType::Triangle)
    };
    let x0 = (rw - CROP_SIZE) / 2;
    let y0 = (rh - CROP_SIZE) / 2;
    Ok(imageops::crop_imm(&resized, x0, y0, CROP_SIZE, CROP_SIZE).to_image())
}
