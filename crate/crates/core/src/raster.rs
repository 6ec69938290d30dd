use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be positive, got {0}x{1}")]
    EmptyDimensions(u32, u32),
    #[error("pixel buffer holds {got} pixels, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Rgb = [u8; 3];

/// Row-major RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions(width, height));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(RasterError::PixelCount {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, color: Rgb) -> Result<Self, RasterError> {
        Self::new(width, height, vec![color; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[self.offset(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgb) {
        let i = self.offset(x, y);
        self.pixels[i] = c;
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of frame");
        y as usize * self.width as usize + x as usize
    }

    /// Builds a new raster where output pixel `(x, y)` takes the value of the
    /// source pixel returned by `source(x, y)`.
    pub fn remap(
        &self,
        width: u32,
        height: u32,
        source: impl Fn(u32, u32) -> (u32, u32),
    ) -> Result<Self, RasterError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = source(x, y);
                pixels.push(self.get(sx, sy));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn map_pixels(&self, f: impl Fn(Rgb) -> Rgb) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| f(p)).collect(),
        }
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        RgbImage::from_raw(self.width, self.height, raw).expect("buffer size checked at construction")
    }

    pub fn from_rgb_image(img: &RgbImage) -> Result<Self, RasterError> {
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(img.width(), img.height(), pixels)
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path)?.to_rgb8();
        Self::from_rgb_image(&img)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        self.to_rgb_image().save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
        Self::from_rgb_image(&img)
    }
}
