use std::path::Path;

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Single-channel image with intensities in [0, 1], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Image(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Image(format!(
                "crop {height}x{width} at ({top}, {left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(width, height, |r, c| self.get(top + r, left + c)))
    }

    /// Bilinear resampling with pixel-center alignment; same-size resizing is the identity.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("resize to an empty image".into()));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let axis = |o: usize, scale: f64, len: usize| {
            let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, p - i0 as f64)
        };
        Ok(Self::from_fn(width, height, |r, c| {
            let (r0, r1, fy) = axis(r, sy, self.height);
            let (c0, c1, fx) = axis(c, sx, self.width);
            let top = self.get(r0, c0) * (1.0 - fx) + self.get(r0, c1) * fx;
            let bottom = self.get(r1, c0) * (1.0 - fx) + self.get(r1, c1) * fx;
            top * (1.0 - fy) + bottom * fy
        }))
    }

    /// Root-mean-square pixel difference.
    pub fn rms_difference(&self, other: &Self) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Image("size mismatch".into()));
        }
        let ss: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok((ss / self.data.len() as f64).sqrt())
    }

    /// 8-bit round trip, as the image would look after a PNG save and load.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v) as f64 / 255.0).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.height, self.width], self.data.clone()).expect("consistent image")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer sized to dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::Image(format!("{}: {other}", path.display())),
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::new(
            w as usize,
            h as usize,
            gray.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
        )
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Stacks equally sized images into a (B, 1, H, W) batch.
pub fn batch_tensor(images: &[&GrayImage]) -> Result<Tensor> {
    let first = images.first().ok_or(Error::EmptyInput("image batch"))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if (img.width, img.height) != (w, h) {
            return Err(Error::Image("images in a batch differ in size".into()));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new([images.len(), 1, h, w], data)
}
