//! Box-initialised GrabCut and the mask-to-profile conversion feeding the
//! volume formulas.

mod components;
pub mod gmm;
mod grabcut;
pub mod maxflow;
mod profile;

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::dataset::BoundingBox;
use crate::error::{Error, Result};

pub use components::largest_component;
pub use gmm::{fit_gmm, Gmm, GmmFit, Rgb};
pub use grabcut::{grabcut, grabcut_detailed, GrabCutOutcome, SegConfig, Trimap, TrimapState};
pub use maxflow::{min_cut, CutResult, FlowGraph};
pub use profile::{extract_profile, SilhouetteProfile};

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue("raster dimensions must be at least 1x1".into()));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidValue(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Raster { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Result<Self> {
        Raster::new(width, height, vec![color; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, color: [u8; 3]) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = color;
    }

    pub fn crop(&self, region: &BoundingBox) -> Result<Raster> {
        region.check_within(self.width, self.height)?;
        let mut pixels = Vec::with_capacity(region.area() as usize);
        for y in region.y_min..region.y_max {
            for x in region.x_min..region.x_max {
                pixels.push(self.get(x, y));
            }
        }
        Raster::new(region.width(), region.height(), pixels)
    }

    /// Area-averaging downscale to `width x height` (each output pixel is
    /// the coverage-weighted mean of the source pixels under it).
    pub fn resize_area(&self, width: u32, height: u32) -> Raster {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for oy in 0..height {
            let y0 = oy as f64 * sy;
            let y1 = y0 + sy;
            for ox in 0..width {
                let x0 = ox as f64 * sx;
                let x1 = x0 + sx;
                let mut acc = [0.0f64; 3];
                let mut total = 0.0;
                let mut y = y0.floor() as u32;
                while (y as f64) < y1 && y < self.height {
                    let wy = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
                    let mut x = x0.floor() as u32;
                    while (x as f64) < x1 && x < self.width {
                        let wx = (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                        let w = wx * wy;
                        let p = self.get(x, y);
                        for c in 0..3 {
                            acc[c] += w * p[c] as f64;
                        }
                        total += w;
                        x += 1;
                    }
                    y += 1;
                }
                pixels.push(acc.map(|v| (v / total).round().clamp(0.0, 255.0) as u8));
            }
        }
        Raster {
            width,
            height,
            pixels,
        }
    }

    pub fn from_rgb_image(img: &RgbImage) -> Result<Self> {
        Raster::new(img.width(), img.height(), img.pixels().map(|p| p.0).collect())
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| image::Rgb(self.get(x, y)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Raster::from_rgb_image(&img.to_rgb8())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Binary foreground mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidValue(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(Mask { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn crop(&self, region: &BoundingBox) -> Result<Mask> {
        region.check_within(self.width, self.height)?;
        Ok(Mask::from_fn(region.width(), region.height(), |x, y| {
            self.get(region.x_min + x, region.y_min + y)
        }))
    }

    /// Nearest-neighbour resize.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Mask {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Mask::from_fn(width, height, |x, y| {
            let src_x = (((x as f64 + 0.5) * sx) as u32).min(self.width - 1);
            let src_y = (((y as f64 + 0.5) * sy) as u32).min(self.height - 1);
            self.get(src_x, src_y)
        })
    }

    /// Intersection over union of two same-sized masks. Two empty masks
    /// give 1.
    pub fn iou(&self, other: &Mask) -> f64 {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "iou of differently sized masks"
        );
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    /// Writes an 8-bit PNG with 255 for foreground and 0 for background.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn load_png(path: &Path) -> Result<Mask> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_luma8();
        Ok(Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y).0[0] >= 128))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_rejects_bad_dimensions() {
        assert!(Raster::new(0, 3, vec![]).is_err());
        assert!(Raster::new(2, 2, vec![[0; 3]; 3]).is_err());
    }

    #[test]
    fn crop_and_area_resize() {
        let mut r = Raster::filled(4, 4, [0, 0, 0]).unwrap();
        r.set(0, 0, [200, 100, 40]);
        let c = r.crop(&BoundingBox::new(0, 0, 2, 2).unwrap()).unwrap();
        assert_eq!(c.get(0, 0), [200, 100, 40]);
        let small = r.resize_area(2, 2);
        assert_eq!(small.get(0, 0), [50, 25, 10]);
        assert_eq!(small.get(1, 1), [0, 0, 0]);
    }

    #[test]
    fn mask_iou_and_resize() {
        let a = Mask::from_fn(4, 4, |x, _| x < 2);
        let b = Mask::from_fn(4, 4, |x, _| x < 3);
        assert!((a.iou(&b) - 8.0 / 12.0).abs() < 1e-12);
        let up = a.resize_nearest(8, 8);
        assert_eq!(up.count(), 32);
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = Mask::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        m.save_png(&path).unwrap();
        assert_eq!(Mask::load_png(&path).unwrap(), m);
    }
}
