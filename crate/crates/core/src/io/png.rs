//! 8-bit PNG read/write. RGBA reads composite over white; anything that is
//! not 8-bit RGB or RGBA is rejected.

use std::path::Path;

use image::{DynamicImage, ImageReader, RgbImage};

use crate::raster::Raster;
use crate::{Error, Result};

pub fn read_png(path: &Path) -> Result<Raster> {
    let reader = ImageReader::open(path).map_err(|e| Error::FileAccess {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let img = reader.decode().map_err(|e| Error::FileAccess {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match img {
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.pixels().flat_map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
            Raster::from_data(w, h, data)
        }
        DynamicImage::ImageRgba8(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf
                .pixels()
                .flat_map(|p| {
                    let a = p.0[3] as f64 / 255.0;
                    [0, 1, 2].map(|c| {
                        let v = p.0[c] as f64 / 255.0;
                        a * v + (1.0 - a)
                    })
                })
                .collect();
            Raster::from_data(w, h, data)
        }
        other => Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit RGB or RGBA, got {other:?}", other = other.color()),
        }),
    }
}

pub fn write_png(raster: &Raster, path: &Path) -> Result<()> {
    let mut buf = RgbImage::new(raster.width(), raster.height());
    for y in 0..raster.height() {
        for x in 0..raster.width() {
            let p = raster.get(x, y);
            // Round half-up after clamping to the unit range.
            let q = p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            buf.put_pixel(x, y, image::Rgb(q));
        }
    }
    buf.save(path).map_err(|e| Error::FileAccess { path: path.to_path_buf(), message: e.to_string() })
}
