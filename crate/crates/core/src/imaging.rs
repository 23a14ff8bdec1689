//! A minimal floating-point RGB image and the resampling it needs.

use std::path::Path;

use crate::{Error, Result};

/// Row-major RGB image with channel values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid(format!(
                "image buffer of {} pixels does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        RgbImage { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        })?;
        Ok(Self::from_dynamic(img))
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::invalid(format!("cannot decode image: {e}")))?;
        Ok(Self::from_dynamic(img))
    }

    fn from_dynamic(img: image::DynamicImage) -> Self {
        let rgb = img.into_rgb32f();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .pixels()
            .map(|p| [p.0[0] as f64, p.0[1] as f64, p.0[2] as f64])
            .collect();
        RgbImage {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    /// 8-bit PNG encoding (values clamped to `[0, 1]`).
    pub fn encode_png(&self) -> Vec<u8> {
        let buf = image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(x as usize, y as usize);
            image::Rgb(p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        });
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .expect("png encoding to memory");
        out.into_inner()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    /// Centered `side × side` crop.
    pub fn center_crop(&self, side: usize) -> Result<Self> {
        if side == 0 || side > self.width || side > self.height {
            return Err(Error::invalid(format!(
                "cannot crop {side}x{side} from {}x{}",
                self.width, self.height
            )));
        }
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        Ok(Self::from_fn(side, side, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        Self::from_fn(width, height, |x, y| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
            std::array::from_fn(|ch| {
                let top = a[ch] * (1.0 - tx) + b[ch] * tx;
                let bottom = c[ch] * (1.0 - tx) + d[ch] * tx;
                top * (1.0 - ty) + bottom * ty
            })
        })
    }

    /// Rotation by 90° counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    pub fn clamp_unit(mut self) -> Self {
        for p in &mut self.data {
            for c in p.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
        }
        self
    }
}
