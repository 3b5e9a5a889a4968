//! PNG export/import of label masks and quick-look previews.
//!
//! Label masks are written as 8-bit grayscale where the pixel value *is*
//! the class id, so external editors can repaint classes and the result
//! loads back losslessly. Previews (RGB stacks, palette renderings, hot
//! uncertainty maps) are presentation-only and are never read back.

use crate::cloud::ClassDef;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::LabelMask;
use image::{DynamicImage, GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use ndarray::Array2;
use std::path::Path;

fn image_err(e: image::ImageError) -> Error {
    Error::Format(format!("PNG error: {e}"))
}

/// Writes `mask` as grayscale PNG with class ids as pixel values.
pub fn save_label_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([mask[(y as usize, x as usize)]])
    });
    img.save_with_format(path, ImageFormat::Png).map_err(image_err)
}

/// Reads a grayscale label mask written by [`save_label_mask`] (or edited
/// externally). Non-grayscale images are rejected rather than converted,
/// since any color transform would corrupt class ids.
pub fn load_label_mask(path: &Path) -> Result<LabelMask> {
    let img = image::open(path).map_err(image_err)?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Format(format!(
                "label masks must be 8-bit grayscale PNGs, found {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        gray.get_pixel(j as u32, i as u32)[0]
    }))
}

/// Renders a label mask through a class palette. Labels without a palette
/// entry show as magenta so they stand out.
pub fn save_label_colors(mask: &LabelMask, classes: &[ClassDef], path: &Path) -> Result<()> {
    let mut palette = [[255u8, 0, 255]; 256];
    for class in classes {
        palette[class.id as usize] = class.color;
    }
    let (h, w) = mask.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb(palette[mask[(y as usize, x as usize)] as usize])
    });
    img.save_with_format(path, ImageFormat::Png).map_err(image_err)
}

fn to_byte<T: Real>(v: T) -> u8 {
    let clamped = v.max(T::zero()).min(T::one()).as_f64();
    (clamped * 255.0).round() as u8
}

/// Writes three equally shaped channels (values in [0, 1], clamped) as one
/// RGB preview.
pub fn save_rgb_preview<T: Real>(
    channels: [&Array2<T>; 3],
    path: &Path,
) -> Result<()> {
    let dim = channels[0].dim();
    for (k, c) in channels.iter().enumerate() {
        if c.dim() != dim {
            return Err(Error::dims(
                format!("preview channel {k}"),
                format!("{:?}", dim),
                format!("{:?}", c.dim()),
            ));
        }
    }
    let (h, w) = dim;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = (y as usize, x as usize);
        Rgb([
            to_byte(channels[0][at]),
            to_byte(channels[1][at]),
            to_byte(channels[2][at]),
        ])
    });
    img.save_with_format(path, ImageFormat::Png).map_err(image_err)
}

fn hot(t: f64) -> [u8; 3] {
    let ramp = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ramp(3.0 * t), ramp(3.0 * t - 1.0), ramp(3.0 * t - 2.0)]
}

/// Min-max rescales `map` over the valid pixels and renders it with a
/// black-red-yellow-white ("hot") ramp; invalid pixels are black, and a
/// constant map renders at the bottom of the ramp.
pub fn save_hot_preview<T: Real>(
    map: &Array2<T>,
    valid: Option<&Array2<bool>>,
    path: &Path,
) -> Result<()> {
    if let Some(v) = valid {
        if v.dim() != map.dim() {
            return Err(Error::dims(
                "preview validity mask",
                format!("{:?}", map.dim()),
                format!("{:?}", v.dim()),
            ));
        }
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (idx, v) in map.indexed_iter() {
        if valid.map_or(true, |m| m[idx]) {
            min = min.min(v.as_f64());
            max = max.max(v.as_f64());
        }
    }
    let scale = if max > min { max - min } else { 1.0 };
    let (h, w) = map.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = (y as usize, x as usize);
        if valid.map_or(false, |m| !m[at]) || min > max {
            return Rgb([0, 0, 0]);
        }
        Rgb(hot((map[at].as_f64() - min) / scale))
    });
    img.save_with_format(path, ImageFormat::Png).map_err(image_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::default_classes;
    use ndarray::array;
    use tempfile::tempdir;

    #[test]
    fn label_mask_round_trips_exactly() {
        let mask = array![[0u8, 1, 5], [255, 42, 0]];
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.png");
        save_label_mask(&mask, &path).unwrap();
        assert_eq!(load_label_mask(&path).unwrap(), mask);
    }

    #[test]
    fn color_images_are_not_label_masks() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let plane = array![[0.5f32, 1.0], [0.0, 0.25]];
        save_rgb_preview([&plane, &plane, &plane], &path).unwrap();
        let err = load_label_mask(&path).unwrap_err().to_string();
        assert!(err.contains("grayscale"), "{err}");
    }

    #[test]
    fn rgb_preview_scales_and_clamps() {
        let r = array![[0.0f64, 2.0]];
        let g = array![[0.5, -1.0]];
        let b = array![[1.0, 0.25]];
        let dir = tempdir().unwrap();
        let path = dir.path().join("preview.png");
        save_rgb_preview([&r, &g, &b], &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [0, 128, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 0, 64]);
        let short = array![[0.1f64]];
        assert!(save_rgb_preview([&r, &g, &short], &path).is_err());
    }

    #[test]
    fn hot_preview_spans_black_to_white() {
        let map = array![[0.0f64, 0.5, 1.0]];
        let dir = tempdir().unwrap();
        let path = dir.path().join("hot.png");
        save_hot_preview(&map, None, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(2, 0).0, [255, 255, 255]);
        let mid = img.get_pixel(1, 0).0;
        assert_eq!(mid[0], 255); // red saturates by mid-ramp
        assert!(mid[2] == 0); // blue only appears near the top
    }

    #[test]
    fn hot_preview_blacks_out_invalid_and_keeps_constant_low() {
        let map = array![[3.0f64, 3.0], [3.0, 9.0]];
        let valid = array![[true, true], [true, false]];
        let dir = tempdir().unwrap();
        let path = dir.path().join("flat.png");
        save_hot_preview(&map, Some(&valid), &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        // constant over valid pixels -> bottom of ramp
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(1, 1).0, [0, 0, 0]); // invalid
    }

    #[test]
    fn palette_rendering_marks_unknown_classes() {
        let mask = array![[1u8, 200]];
        let dir = tempdir().unwrap();
        let path = dir.path().join("classes.png");
        save_label_colors(&mask, &default_classes(), &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(1, 0).0, [255, 0, 255]);
        assert_ne!(img.get_pixel(0, 0).0, [255, 0, 255]);
    }
}
