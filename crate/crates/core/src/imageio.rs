//! PNG encoding of intensity grids.
//!
//! Corpus images are 16-bit grayscale with `[-1, 1]` mapped linearly onto
//! `[0, 65535]`.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::grid::Grid;

const MAX16: f32 = 65535.0;

pub fn to_u16(v: f32) -> u16 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * MAX16).round() as u16
}

pub fn from_u16(q: u16) -> f32 {
    f32::from(q) / MAX16 * 2.0 - 1.0
}

fn save<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::format(path, e.to_string()))
}

/// Write a `[-1, 1]` grid as 16-bit grayscale.
pub fn write_png16(g: &Grid, path: &Path) -> Result<()> {
    let buf: Vec<u16> = g.data().iter().map(|&v| to_u16(v)).collect();
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(g.width() as u32, g.height() as u32, buf)
        .ok_or_else(|| Error::format(path, "buffer size mismatch"))?;
    save(&img, path)
}

/// Read a grayscale PNG back into `[-1, 1]`.
pub fn read_png16(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    Grid::new(h as usize, w as usize, luma.into_raw().into_iter().map(from_u16).collect())
}

/// Min-max normalize to the full 16-bit range (constant maps go to 0).
pub fn write_png16_normalized(g: &Grid, path: &Path) -> Result<()> {
    let (lo, hi) = g.min_max();
    let span = hi - lo;
    let buf: Vec<u16> =
        g.data().iter().map(|&v| if span > 0.0 { (((v - lo) / span) * MAX16).round() as u16 } else { 0 }).collect();
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(g.width() as u32, g.height() as u32, buf)
        .ok_or_else(|| Error::format(path, "buffer size mismatch"))?;
    save(&img, path)
}

/// Heatmap (min-max normalized) alpha-blended in red over a `[-1, 1]` image.
pub fn write_overlay_png(image: &Grid, heat: &Grid, alpha: f32, path: &Path) -> Result<()> {
    if image.dims() != heat.dims() {
        return Err(Error::Usage("overlay needs image and heatmap of equal size".into()));
    }
    let (lo, hi) = heat.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(image.width() as u32, image.height() as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (yy, xx) = (y as usize, x as usize);
        let base = (image.get(yy, xx).clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0;
        let a = alpha * (heat.get(yy, xx) - lo) / span;
        let blend = |c: f32| ((1.0 - a) * base + a * c).round().clamp(0.0, 255.0) as u8;
        *px = Rgb([blend(255.0), blend(0.0), blend(0.0)]);
    }
    save(&img, path)
}
