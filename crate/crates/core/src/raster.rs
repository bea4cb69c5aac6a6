//! RGB raster buffers.
//!
//! Pixels are stored row-major as f64 triples. Images produced by the
//! renderer and the PNG reader stay in [0, 1]; the same container also holds
//! gradient buffers, which are unbounded.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Raster {
    /// All-zero (black) raster.
    pub fn new(width: u32, height: u32) -> Self {
        Raster { width, height, data: vec![0.0; width as usize * height as usize * 3] }
    }

    pub fn filled(width: u32, height: u32, rgb: [f64; 3]) -> Self {
        let mut r = Raster::new(width, height);
        for px in r.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        r
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} scalars"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Raster { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn add(&mut self, x: u32, y: u32, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] += rgb[0];
        self.data[i + 1] += rgb[1];
        self.data[i + 2] += rgb[2];
    }

    pub fn same_dims(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mean squared error over all pixels and channels.
    pub fn mse(&self, other: &Raster) -> f64 {
        assert!(self.same_dims(other), "raster dimensions differ");
        let n = self.data.len() as f64;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
    }

    /// Peak signal-to-noise ratio in dB for unit-range images; infinite for
    /// identical inputs.
    pub fn psnr(&self, other: &Raster) -> f64 {
        let mse = self.mse(other);
        if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (1.0 / mse).log10()
        }
    }

    pub fn mean_abs_diff(&self, other: &Raster) -> f64 {
        assert!(self.same_dims(other), "raster dimensions differ");
        let n = self.data.len() as f64;
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
    }

    /// Mean color over all pixels.
    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for px in self.data.chunks_exact(3) {
            acc[0] += px[0];
            acc[1] += px[1];
            acc[2] += px[2];
        }
        let n = (self.width as usize * self.height as usize).max(1) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }

    /// Box-filter downsample by an integer factor; dimensions must divide.
    pub fn downsample(&self, factor: u32) -> Raster {
        assert!(factor > 0 && self.width % factor == 0 && self.height % factor == 0);
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = Raster::new(w, h);
        let inv = 1.0 / (factor as f64 * factor as f64);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f64; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.get(x * factor + dx, y * factor + dy);
                        acc[0] += p[0];
                        acc[1] += p[1];
                        acc[2] += p[2];
                    }
                }
                out.set(x, y, [acc[0] * inv, acc[1] * inv, acc[2] * inv]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_identical_is_infinite() {
        let a = Raster::filled(4, 4, [0.3, 0.4, 0.5]);
        assert!(a.psnr(&a).is_infinite());
    }

    #[test]
    fn mse_of_opposite_extremes_is_one() {
        let a = Raster::filled(2, 2, [0.0; 3]);
        let b = Raster::filled(2, 2, [1.0; 3]);
        assert_eq!(a.mse(&b), 1.0);
    }

    #[test]
    fn downsample_averages_blocks() {
        let mut a = Raster::new(2, 2);
        a.set(0, 0, [0.0; 3]);
        a.set(1, 0, [0.0; 3]);
        a.set(0, 1, [1.0; 3]);
        a.set(1, 1, [1.0; 3]);
        let d = a.downsample(2);
        assert_eq!(d.get(0, 0), [0.5; 3]);
    }
}
