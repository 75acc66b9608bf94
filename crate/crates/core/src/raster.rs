use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Planar (CHW) image with values in `[0, 1]`, 1 (grayscale) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        assert!(channels == 1 || channels == 3, "unsupported channel count {channels}");
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Input(format!(
                "raster data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let plane = self.width * self.height;
        let data = (0..plane)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[plane + i] + 0.114 * self.data[2 * plane + i])
            .collect();
        Raster { width: self.width, height: self.height, channels: 1, data }
    }

    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Raster { width: self.width, height: self.height, channels: 3, data }
    }

    /// Shrinks (box-filter) so that the longer side is at most `max_side`.
    /// Returns the resized raster and the applied scale factor.
    pub fn fit_within(&self, max_side: usize) -> (Raster, f32) {
        let longest = self.width.max(self.height);
        if longest <= max_side || max_side == 0 {
            return (self.clone(), 1.0);
        }
        let scale = max_side as f32 / longest as f32;
        let nw = ((self.width as f32 * scale).round() as usize).max(1);
        let nh = ((self.height as f32 * scale).round() as usize).max(1);
        let mut out = Raster::filled(nw, nh, self.channels, 0.0);
        for c in 0..self.channels {
            for y in 0..nh {
                let sy0 = y * self.height / nh;
                let sy1 = ((y + 1) * self.height / nh).max(sy0 + 1).min(self.height);
                for x in 0..nw {
                    let sx0 = x * self.width / nw;
                    let sx1 = ((x + 1) * self.width / nw).max(sx0 + 1).min(self.width);
                    let mut acc = 0.0;
                    for sy in sy0..sy1 {
                        for sx in sx0..sx1 {
                            acc += self.get(c, sx, sy);
                        }
                    }
                    out.set(c, x, y, acc / ((sy1 - sy0) * (sx1 - sx0)) as f32);
                }
            }
        }
        (out, scale)
    }

    pub fn from_dynamic(img: &DynamicImage, grayscale: bool) -> Raster {
        if grayscale {
            let g = img.to_luma8();
            let data = g.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
            Raster { width: g.width() as usize, height: g.height() as usize, channels: 1, data }
        } else {
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let mut data = vec![0.0; w * h * 3];
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * w * h + i] = p.0[c] as f32 / 255.0;
                }
            }
            Raster { width: w, height: h, channels: 3, data }
        }
    }

    pub fn load(path: &Path, grayscale: bool) -> Result<Raster> {
        let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(Self::from_dynamic(&img, grayscale))
    }

    fn quantize(v: f32) -> u8 {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([Self::quantize(self.get(0, x as usize, y as usize))]));
            DynamicImage::ImageLuma8(buf)
        } else {
            let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([Self::quantize(self.get(0, x, y)), Self::quantize(self.get(1, x, y)), Self::quantize(self.get(2, x, y))])
            });
            DynamicImage::ImageRgb8(buf)
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_dynamic()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Draws a one-pixel rectangle outline (RGB rasters only).
    pub fn draw_box(&mut self, b: &BBox, color: [f32; 3]) {
        assert_eq!(self.channels, 3, "draw_box needs an RGB raster");
        let clipped = b.clip(self.width as f32 - 1.0, self.height as f32 - 1.0);
        let (x0, y0) = (clipped.x0.round() as usize, clipped.y0.round() as usize);
        let (x1, y1) = (clipped.x1.round() as usize, clipped.y1.round() as usize);
        for c in 0..3 {
            for x in x0..=x1 {
                self.set(c, x, y0, color[c]);
                self.set(c, x, y1, color[c]);
            }
            for y in y0..=y1 {
                self.set(c, x0, y, color[c]);
                self.set(c, x1, y, color[c]);
            }
        }
    }
}
