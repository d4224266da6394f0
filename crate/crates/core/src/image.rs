//! 8-bit raster images and PNG codec.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub const IMAGE_SIZE: usize = 224;

/// Interleaved (HWC) 8-bit image with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        ImageU8 {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, v: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(v);
    }

    /// Left-right mirror.
    pub fn mirrored(&self) -> ImageU8 {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set_pixel(self.width - 1 - x, y, self.pixel(x, y));
            }
        }
        out
    }

    /// CHW tensor with values `v / 255`.
    pub fn to_unit_tensor(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.channels, self.height, self.width]);
        write_unit_chw(self, t.data_mut());
        t
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => return Err(Error::invalid(format!("cannot encode {c}-channel image"))),
        });
        enc.set_depth(png::BitDepth::Eight);
        let img_err = |e: png::EncodingError| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = enc.write_header().map_err(img_err)?;
        w.write_image_data(&self.data).map_err(img_err)?;
        w.finish().map_err(img_err)
    }

    /// Decode an 8-bit PNG; grayscale+alpha and RGBA are reduced to gray and RGB.
    pub fn load_png(path: &Path) -> Result<ImageU8> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let img_err = |m: String| Error::Image {
            path: path.to_path_buf(),
            message: m,
        };
        let mut dec = png::Decoder::new(BufReader::new(file));
        dec.set_transformations(png::Transformations::EXPAND);
        let mut reader = dec.read_info().map_err(|e| img_err(e.to_string()))?;
        let mut buf = vec![
            0;
            reader
                .output_buffer_size()
                .ok_or_else(|| img_err("image too large".into()))?
        ];
        let info = reader.next_frame(&mut buf).map_err(|e| img_err(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(img_err(format!("unsupported bit depth {:?}", info.bit_depth)));
        }
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width as usize, info.height as usize);
        let (channels, data) = match info.color_type {
            png::ColorType::Grayscale => (1, buf),
            png::ColorType::Rgb => (3, buf),
            png::ColorType::GrayscaleAlpha => (1, buf.chunks(2).map(|p| p[0]).collect()),
            png::ColorType::Rgba => (3, buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
            other => return Err(img_err(format!("unsupported color type {other:?}"))),
        };
        Ok(ImageU8 {
            width: w,
            height: h,
            channels,
            data,
        })
    }
}

/// Write `img` as CHW values `v / 255` into `out`.
pub fn write_unit_chw(img: &ImageU8, out: &mut [f64]) {
    let plane = img.width * img.height;
    assert_eq!(out.len(), plane * img.channels);
    for (i, px) in img.data.chunks(img.channels).enumerate() {
        for (c, v) in px.iter().enumerate() {
            out[c * plane + i] = *v as f64 / 255.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_rgb_and_gray() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageU8::new(5, 3, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 17 % 256) as u8;
        }
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        assert_eq!(ImageU8::load_png(&p).unwrap(), img);

        let mut g = ImageU8::new(4, 4, 1);
        g.data[5] = 255;
        let p = dir.path().join("g.png");
        g.save_png(&p).unwrap();
        assert_eq!(ImageU8::load_png(&p).unwrap(), g);
    }

    #[test]
    fn unit_tensor_is_chw() {
        let mut img = ImageU8::new(2, 1, 3);
        img.data = vec![255, 0, 0, 0, 0, 255];
        let t = img.to_unit_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }
}
