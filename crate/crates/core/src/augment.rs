//! On-the-fly training augmentation: horizontal flip (negating steering),
//! vertical shift, regional darkening, then normalization to `[-0.5, 0.5]`.

use crate::datasetio::LoadedDataset;
use crate::error::{Error, Result};
use crate::image::write_unit_chw;
use crate::nn::Tensor;
use crate::seed::{self, Rng};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub flip_prob: f64,
    pub shift_prob: f64,
    pub darken_prob: f64,
    /// Largest vertical shift as a fraction of the image height.
    pub max_shift: f64,
    /// Bounds on the darkened rectangle, as fractions of the image area.
    pub darken_min_area: f64,
    pub darken_max_area: f64,
    pub darken_factor: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            flip_prob: 0.5,
            shift_prob: 0.5,
            darken_prob: 0.5,
            max_shift: 0.2,
            darken_min_area: 0.1,
            darken_max_area: 0.5,
            darken_factor: 0.5,
        }
    }
}

fn dims(img: &Tensor) -> (usize, usize, usize) {
    let s = img.shape();
    (s[0], s[1], s[2])
}

/// Mirror a `[C, H, W]` image left to right.
pub fn hflip(img: &Tensor) -> Tensor {
    let (c, h, w) = dims(img);
    let mut out = Tensor::zeros(img.shape());
    let src = img.data();
    let dst = out.data_mut();
    for row in 0..c * h {
        let s = &src[row * w..(row + 1) * w];
        let d = &mut dst[row * w..(row + 1) * w];
        for x in 0..w {
            d[x] = s[w - 1 - x];
        }
    }
    out
}

/// With probability `p`, mirror the image and negate the steering.
pub fn hflip_pair(img: &Tensor, steering: f64, p: f64, rng: &mut Rng) -> (Tensor, f64, bool) {
    if rng.random::<f64>() < p {
        (hflip(img), -steering, true)
    } else {
        (img.clone(), steering, false)
    }
}

/// Translate rows by `offset` pixels (positive moves content down),
/// replicating the edge row into the vacated band.
pub fn shift_rows(img: &Tensor, offset: isize) -> Tensor {
    let (c, h, w) = dims(img);
    let mut out = Tensor::zeros(img.shape());
    let src = img.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let sy = (y as isize - offset).clamp(0, h as isize - 1) as usize;
            let s = &src[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            dst[(ch * h + y) * w..(ch * h + y + 1) * w].copy_from_slice(s);
        }
    }
    out
}

/// Draw a shift uniformly from `[-floor(max_frac * H), +floor(max_frac * H)]`.
pub fn draw_shift(height: usize, max_frac: f64, rng: &mut Rng) -> isize {
    let m = (max_frac * height as f64).floor() as i64;
    rng.random_range(-m..=m) as isize
}

pub fn vshift(img: &Tensor, max_frac: f64, rng: &mut Rng) -> Tensor {
    let off = draw_shift(dims(img).1, max_frac, rng);
    shift_rows(img, off)
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Random rectangle whose area lies in `[min_frac, max_frac]` of the image,
/// redrawn until it does (degenerate draws are never returned).
pub fn draw_region(h: usize, w: usize, min_frac: f64, max_frac: f64, rng: &mut Rng) -> Rect {
    let total = (h * w) as f64;
    loop {
        let frac = rng.random_range(min_frac..=max_frac);
        let aspect = rng.random_range(0.5f64.ln()..=2f64.ln()).exp();
        let rw = ((frac * total * aspect).sqrt().round() as usize).clamp(1, w);
        let rh = ((frac * total / rw as f64).round() as usize).clamp(1, h);
        let area = (rw * rh) as f64 / total;
        if area < min_frac || area > max_frac {
            continue;
        }
        let x0 = rng.random_range(0..=w - rw);
        let y0 = rng.random_range(0..=h - rh);
        return Rect {
            x0,
            y0,
            x1: x0 + rw,
            y1: y0 + rh,
        };
    }
}

/// Multiply the pixels of `r` (all channels) by `factor`.
pub fn darken_rect(img: &Tensor, r: Rect, factor: f64) -> Tensor {
    let (c, h, w) = dims(img);
    let mut out = img.clone();
    let d = out.data_mut();
    for ch in 0..c {
        for y in r.y0..r.y1 {
            for v in &mut d[(ch * h + y) * w + r.x0..(ch * h + y) * w + r.x1] {
                *v *= factor;
            }
        }
    }
    out
}

pub fn darken_region(img: &Tensor, cfg: &AugmentConfig, rng: &mut Rng) -> (Tensor, Rect) {
    let (_, h, w) = dims(img);
    let r = draw_region(h, w, cfg.darken_min_area, cfg.darken_max_area, rng);
    (darken_rect(img, r, cfg.darken_factor), r)
}

/// `v / 255 - 0.5`.
pub fn normalize_value(v: u8) -> f64 {
    v as f64 / 255.0 - 0.5
}

/// Inverse of [`normalize_value`] on the 256 representable levels.
pub fn denormalize_value(x: f64) -> u8 {
    ((x + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Normalize an 8-bit HWC image into a CHW tensor in `[-0.5, 0.5]`.
pub fn normalize_image(img: &crate::image::ImageU8) -> Tensor {
    let mut t = img.to_unit_tensor();
    t.data_mut().iter_mut().for_each(|v| *v -= 0.5);
    t
}

/// One training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 3, H, W]`, normalized.
    pub images: Tensor,
    pub steering: Vec<f64>,
    /// `[B, 1, H, W]` lane masks in `[0, 1]`, aligned with the augmented images.
    pub masks: Option<Tensor>,
    /// Dataset rows in this batch.
    pub indices: Vec<usize>,
}

/// Deterministic batch producer over a decoded dataset. Epoch `e` is a seeded
/// permutation; augmentation draws come from a per-epoch stream.
pub struct AugmentStream<'a> {
    data: &'a LoadedDataset,
    batch_size: usize,
    config: AugmentConfig,
    seed: u64,
    soften_masks: bool,
}

impl<'a> AugmentStream<'a> {
    pub fn new(data: &'a LoadedDataset, batch_size: usize, config: AugmentConfig, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if data.is_empty() {
            return Err(Error::invalid("cannot stream an empty dataset"));
        }
        Ok(AugmentStream {
            data,
            batch_size,
            config,
            seed,
            soften_masks: false,
        })
    }

    /// Blur masks (see [`crate::simworld::soften_mask`]) before batching.
    pub fn with_soft_masks(mut self, on: bool) -> Self {
        self.soften_masks = on;
        self
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }

    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut seed::rng_for(self.seed, &format!("shuffle/{epoch}")));
        order
    }

    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Batch> + '_ {
        let order = self.epoch_order(epoch);
        let mut rng = seed::rng_for(self.seed, &format!("augment/{epoch}"));
        let chunks: Vec<Vec<usize>> = order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |idx| self.make_batch(idx, &mut rng))
    }

    /// Batch of the given rows, normalized, with augmentation when enabled.
    pub fn make_batch(&self, idx: Vec<usize>, rng: &mut Rng) -> Batch {
        let d = self.data;
        let first = &d.images[idx[0]];
        let (h, w) = (first.height, first.width);
        let plane = h * w;
        let mut images = Tensor::zeros(&[idx.len(), 3, h, w]);
        let mut masks = d.masks.as_ref().map(|_| Tensor::zeros(&[idx.len(), 1, h, w]));
        let mut steering = Vec::with_capacity(idx.len());
        let cfg = &self.config;
        for (b, &i) in idx.iter().enumerate() {
            let mut img = Tensor::zeros(&[3, h, w]);
            write_unit_chw(&d.images[i], img.data_mut());
            let mut mask = d.masks.as_ref().map(|m| {
                let src = if self.soften_masks {
                    crate::simworld::soften_mask(&m[i])
                } else {
                    m[i].clone()
                };
                let mut t = Tensor::zeros(&[1, h, w]);
                write_unit_chw(&src, t.data_mut());
                t
            });
            let mut y = d.steering[i];
            if cfg.enabled {
                let (flipped, ny, did) = hflip_pair(&img, y, cfg.flip_prob, rng);
                img = flipped;
                y = ny;
                if did {
                    mask = mask.map(|m| hflip(&m));
                }
                if rng.random::<f64>() < cfg.shift_prob {
                    let off = draw_shift(h, cfg.max_shift, rng);
                    img = shift_rows(&img, off);
                    mask = mask.map(|m| shift_rows(&m, off));
                }
                if rng.random::<f64>() < cfg.darken_prob {
                    img = darken_region(&img, cfg, rng).0;
                }
            }
            let dst = images.item_mut(b);
            for (o, v) in dst.iter_mut().zip(img.data()) {
                *o = v - 0.5;
            }
            if let (Some(ms), Some(m)) = (masks.as_mut(), mask) {
                ms.item_mut(b)[..plane].copy_from_slice(m.data());
            }
            steering.push(y);
        }
        Batch {
            images,
            steering,
            masks,
            indices: idx,
        }
    }

    /// Batches in dataset order without augmentation (evaluation).
    pub fn sequential(&self) -> impl Iterator<Item = Batch> + '_ {
        let plain = AugmentStream {
            data: self.data,
            batch_size: self.batch_size,
            config: AugmentConfig {
                enabled: false,
                ..self.config
            },
            seed: self.seed,
            soften_masks: self.soften_masks,
        };
        let mut rng = seed::rng(0);
        let n = self.data.len();
        let bs = self.batch_size;
        (0..n.div_ceil(bs)).map(move |k| plain.make_batch((k * bs..((k + 1) * bs).min(n)).collect(), &mut rng))
    }
}
