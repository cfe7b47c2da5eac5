//! RGB intensity images in `[0, 1]` and their hierarchical labels.

use std::path::Path;

use ::image::{imageops, imageops::FilterType, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Row-major, interleaved RGB image with `f32` intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "raw buffer of {} values does not match {width}x{height}x3",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_raw(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel-mean grayscale, row-major.
    pub fn gray(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
            .collect()
    }

    /// Channel-major (CHW) `f64` copy, the layout the CNN streams consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * 3];
        for (i, p) in self.data.chunks_exact(3).enumerate() {
            out[i] = p[0] as f64;
            out[plane + i] = p[1] as f64;
            out[2 * plane + i] = p[2] as f64;
        }
        out
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at integers),
    /// clamped to the image border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let (a, b, c, d) = (
            self.get(x0, y0),
            self.get(x1, y0),
            self.get(x0, y1),
            self.get(x1, y1),
        );
        let mut out = [0f32; 3];
        for ch in 0..3 {
            let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
            let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
            out[ch] = (top * (1.0 - fy) + bottom * fy) as f32;
        }
        out
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(x as usize, y as usize);
            Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            data,
        }
    }

    /// Decodes any supported format and resizes to `size × size` (triangle filter).
    pub fn load(path: &Path, size: usize) -> Result<Self> {
        let decoded = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = decoded.to_rgb8();
        let rgb = if rgb.width() as usize == size && rgb.height() as usize == size {
            rgb
        } else {
            imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle)
        };
        Ok(Self::from_rgb8(&rgb))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// An image with its hierarchical labels: vehicle model and vehicle identity.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Image,
    pub model_id: u64,
    pub identity_id: u64,
    /// Unique within a dataset.
    pub source_id: u64,
}
