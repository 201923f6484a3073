//! Linear RGB images and binary masks with PNG storage.
//!
//! Display conversion is a plain clamp to `[0, 1]` followed by rounding to
//! 8 bits; no gamma curve is applied.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub data: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
    img: &ImageBuffer<P, Vec<S>>,
) -> Result<Vec<u8>>
where
    [S]: image::EncodableLayout,
{
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

impl Image {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        Image {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        self.data[y * self.width + x] = c;
    }

    /// The image as it would be stored: every channel rounded to 8 bits.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|c| c.map(|v| to_u8(v) as f64 / 255.0))
                .collect(),
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (i, c) in self.data.iter().enumerate() {
            let (x, y) = ((i % self.width) as u32, (i / self.width) as u32);
            img.put_pixel(x, y, Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]));
        }
        encode_png(&img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_png_bytes()?)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Image {
            width: w as usize,
            height: h as usize,
            data: img
                .pixels()
                .map(|p| p.0.map(|v| v as f64 / 255.0))
                .collect(),
        })
    }
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Pixel coordinates of set entries, row-major.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, v) in self.data.iter().enumerate() {
            let (x, y) = ((i % self.width) as u32, (i / self.width) as u32);
            img.put_pixel(x, y, Luma([if *v { 255 } else { 0 }]));
        }
        encode_png(&img)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_png_bytes()?)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Mask {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| p.0[0] >= 128).collect(),
        })
    }
}

/// 16-bit grayscale PNG of values in `[0, 1]`.
pub fn gray16_png_bytes(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::InvalidInput("value count does not match image size".into()));
    }
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(width as u32, height as u32);
    for (i, v) in values.iter().enumerate() {
        let (x, y) = ((i % width) as u32, (i / width) as u32);
        img.put_pixel(x, y, Luma([(v.clamp(0.0, 1.0) * 65535.0).round() as u16]));
    }
    encode_png(&img)
}

pub fn save_gray16_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write_atomic(path, &gray16_png_bytes(width, height, values)?)
}
