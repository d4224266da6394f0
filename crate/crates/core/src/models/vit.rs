//! Vision transformer regressor with an optional masked-reconstruction head
//! for self-supervised pre-training.

use super::{check_downsample, check_input, column, Trainable, INPUT};
use crate::augment::Batch;
use crate::error::{Error, Result};
use crate::nn::param::join;
use crate::nn::pool::{avg_pool, upsample_nearest};
use crate::nn::{
    ActKind, Activation, ConvTranspose2d, Layer, LayerNorm, Linear, Mode, Module, MultiHeadAttention, Param,
    ParamVisitor, Parameterized, Sequential, Tensor,
};
use crate::seed::{self, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadVariant {
    /// One hidden layer with a GELU.
    Mlp,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VitConfig {
    pub input_downsample: usize,
    pub patch: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub embed_dim: usize,
    pub head: HeadVariant,
    pub head_hidden: usize,
    /// Fraction of tokens masked during pre-training.
    pub mask_ratio: f64,
    pub recon_hidden: usize,
    pub recon_channels: usize,
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            input_downsample: 1,
            patch: 16,
            width: 384,
            depth: 6,
            heads: 6,
            mlp_ratio: 4,
            embed_dim: 1000,
            head: HeadVariant::Mlp,
            head_hidden: 256,
            mask_ratio: 0.5,
            recon_hidden: 256,
            recon_channels: 32,
        }
    }
}

impl VitConfig {
    /// 112x112 input with 8x8 patches keeps the 14x14 token grid.
    pub fn desk() -> Self {
        VitConfig {
            input_downsample: 2,
            patch: 8,
            width: 48,
            depth: 2,
            heads: 4,
            mlp_ratio: 2,
            head_hidden: 64,
            recon_hidden: 64,
            recon_channels: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_downsample(self.input_downsample, "vit")?;
        let side = INPUT / self.input_downsample;
        if self.patch == 0 || !side.is_multiple_of(self.patch) {
            return Err(Error::invalid(format!(
                "vit patch {} must divide the input side {side}",
                self.patch
            )));
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "vit width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.depth == 0 || self.mlp_ratio == 0 || self.embed_dim == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("vit sizes must be positive"));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "mask_ratio must be in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        if self.recon_hidden == 0 || self.recon_channels == 0 {
            return Err(Error::invalid("vit reconstruction head sizes must be positive"));
        }
        Ok(())
    }

    /// Tokens per side of the patch grid.
    pub fn grid(&self) -> usize {
        INPUT / self.input_downsample / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }
}

/// Split `[B, C, H, W]` into non-overlapping `p x p` patches, `[B, T, C*p*p]`.
/// Tokens are in row-major grid order; each token is laid out channel, row,
/// column.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    x.expect_nchw(None, None, None, "patchify input")?;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::shape(format!("patch {p} does not tile {h}x{w}")));
    }
    let (gh, gw) = (h / p, w / p);
    let k = c * p * p;
    let mut out = Tensor::zeros(&[b, gh * gw, k]);
    for i in 0..b {
        let src = x.item(i);
        let dst = out.item_mut(i);
        for ty in 0..gh {
            for tx in 0..gw {
                let t = ty * gw + tx;
                for ch in 0..c {
                    for py in 0..p {
                        let s = (ch * h + ty * p + py) * w + tx * p;
                        let d = t * k + (ch * p + py) * p;
                        dst[d..d + p].copy_from_slice(&src[s..s + p]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`] for a `channels x side x side` image.
pub fn unpatchify(tokens: &Tensor, p: usize, channels: usize, side: usize) -> Result<Tensor> {
    if tokens.rank() != 3 || p == 0 || !side.is_multiple_of(p) {
        return Err(Error::shape(format!(
            "cannot unpatchify {:?} with patch {p}",
            tokens.shape()
        )));
    }
    let g = side / p;
    let k = channels * p * p;
    let b = tokens.shape()[0];
    tokens.expect_shape(&[b, g * g, k], "tokens")?;
    let mut out = Tensor::zeros(&[b, channels, side, side]);
    for i in 0..b {
        let src = tokens.item(i);
        let dst = out.item_mut(i);
        for ty in 0..g {
            for tx in 0..g {
                let t = ty * g + tx;
                for ch in 0..channels {
                    for py in 0..p {
                        let d = (ch * side + ty * p + py) * side + tx * p;
                        let s = t * k + (ch * p + py) * p;
                        dst[d..d + p].copy_from_slice(&src[s..s + p]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Largest side of a masking rectangle, in patches.
pub const MAX_GROUP: usize = 4;

/// Token mask over a `grid x grid` patch grid built from random rectangles of
/// 2 to 16 patches (sides 1 to 4) until at least `ceil(ratio * T)` tokens are
/// covered. Returns one flag per token, `true` for masked.
pub fn group_mask(grid: usize, ratio: f64, rng: &mut Rng) -> Vec<bool> {
    let t = grid * grid;
    let target = ((ratio * t as f64).ceil() as usize).min(t);
    let mut mask = vec![false; t];
    let mut count = 0;
    let side = MAX_GROUP.min(grid);
    while count < target {
        let (h, w) = loop {
            let h = rng.random_range(1..=side);
            let w = rng.random_range(1..=side);
            if h * w >= 2 || grid == 1 {
                break (h, w);
            }
        };
        let y0 = rng.random_range(0..=grid - h);
        let x0 = rng.random_range(0..=grid - w);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let k = y * grid + x;
                if !mask[k] {
                    mask[k] = true;
                    count += 1;
                }
            }
        }
    }
    mask
}

/// Replace masked tokens of `[B, T, D]` with `token`.
pub fn apply_mask(tokens: &Tensor, masks: &[Vec<bool>], token: &[f64]) -> Result<Tensor> {
    let (b, t, d) = (tokens.shape()[0], tokens.shape()[1], tokens.shape()[2]);
    if masks.len() != b || masks.iter().any(|m| m.len() != t) || token.len() != d {
        return Err(Error::shape("mask does not match the token grid"));
    }
    let mut out = tokens.clone();
    for (i, m) in masks.iter().enumerate() {
        let dst = out.item_mut(i);
        for (k, _) in m.iter().enumerate().filter(|(_, &on)| on) {
            dst[k * d..(k + 1) * d].copy_from_slice(token);
        }
    }
    Ok(out)
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    fc1: Linear,
    act: Activation,
    fc2: Linear,
}

impl Block {
    fn new(cfg: &VitConfig, rng: &mut Rng) -> Self {
        let d = cfg.width;
        Block {
            ln1: LayerNorm::new(d),
            attn: MultiHeadAttention::new(d, cfg.heads, rng),
            ln2: LayerNorm::new(d),
            fc1: Linear::new(d, d * cfg.mlp_ratio, rng),
            act: Activation::new(ActKind::Gelu),
            fc2: Linear::new(d * cfg.mlp_ratio, d, rng),
        }
    }
}

impl Parameterized for Block {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.ln1.visit_params(&join(prefix, "ln1"), f);
        self.attn.visit_params(&join(prefix, "attn"), f);
        self.ln2.visit_params(&join(prefix, "ln2"), f);
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }
}

impl Layer for Block {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let a = self.attn.forward(&self.ln1.forward(x, mode)?, mode)?;
        let mut h = x.clone();
        h.add_assign(&a);
        let m = self.ln2.forward(&h, mode)?;
        let m = self
            .fc2
            .forward(&self.act.forward(&self.fc1.forward(&m, mode)?, mode)?, mode)?;
        h.add_assign(&m);
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut gh = grad.clone();
        let gm = self.fc2.backward(grad);
        gh.add_assign(&self.ln2.backward(&self.fc1.backward(&self.act.backward(&gm))));
        let mut gx = gh.clone();
        gx.add_assign(&self.ln1.backward(&self.attn.backward(&gh)));
        gx
    }
}

/// Which loss [`Trainable`] optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VitObjective {
    Steering,
    /// Masked-token image reconstruction.
    Pretrain,
}

#[derive(Clone, Debug)]
pub struct VitOutput {
    /// `[B, 1]`.
    pub steering: Tensor,
    /// `[B, embed_dim]`.
    pub embedding: Tensor,
}

#[derive(Clone, Debug)]
struct TokenCache {
    masks: Option<Vec<Vec<bool>>>,
}

#[derive(Clone, Debug)]
pub struct VitNet {
    pub config: VitConfig,
    pub objective: VitObjective,
    pub embed: Linear,
    pub pos: Param,
    pub mask_token: Param,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub proj: Linear,
    pub head: Sequential,
    pub recon_mlp: Sequential,
    pub recon_up: ConvTranspose2d,
    mask_seed: u64,
    mask_rng: Rng,
    cache: Option<TokenCache>,
}

fn normal_param(shape: &[usize], std: f64, rng: &mut Rng) -> Param {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("std");
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Param::new(Tensor::from_vec(shape, data).expect("shape"))
}

impl VitNet {
    pub fn new(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed, "init/vit");
        let d = config.width;
        let p = config.patch;
        let t = config.tokens();
        let embed = Linear::new(3 * p * p, d, &mut rng);
        let pos = normal_param(&[t, d], 0.02, &mut rng);
        let mask_token = normal_param(&[d], 0.02, &mut rng);
        let blocks = (0..config.depth).map(|_| Block::new(&config, &mut rng)).collect();
        let proj = Linear::new(d, config.embed_dim, &mut rng);
        let head = match config.head {
            HeadVariant::Mlp => Sequential::new(vec![
                Module::Linear(Linear::new(config.embed_dim, config.head_hidden, &mut rng)),
                Module::act(ActKind::Gelu),
                Module::Linear(Linear::new(config.head_hidden, 1, &mut rng)),
            ]),
            HeadVariant::Linear => Sequential::new(vec![Module::Linear(Linear::new(config.embed_dim, 1, &mut rng))]),
        };
        let recon_mlp = Sequential::new(vec![
            Module::Linear(Linear::new(d, config.recon_hidden, &mut rng)),
            Module::act(ActKind::Gelu),
            Module::Linear(Linear::new(config.recon_hidden, config.recon_channels, &mut rng)),
        ]);
        let recon_up = ConvTranspose2d::new(config.recon_channels, 3, p, p, 0, &mut rng);
        let mask_seed = seed::derive(seed, "vit/mask");
        Ok(VitNet {
            norm: LayerNorm::new(d),
            config,
            objective: VitObjective::Steering,
            embed,
            pos,
            mask_token,
            blocks,
            proj,
            head,
            recon_mlp,
            recon_up,
            mask_seed,
            mask_rng: seed::rng(mask_seed),
            cache: None,
        })
    }

    /// Draw one group mask per image from the internal stream.
    pub fn draw_masks(&mut self, batch: usize) -> Vec<Vec<bool>> {
        let (g, r) = (self.config.grid(), self.config.mask_ratio);
        (0..batch).map(|_| group_mask(g, r, &mut self.mask_rng)).collect()
    }

    /// Contextual token features `[B, T, D]` after the final layer norm.
    /// Masked tokens are replaced by the learned mask token before position
    /// embeddings are added.
    pub fn encode_tokens(&mut self, x: &Tensor, masks: Option<&[Vec<bool>]>, mode: Mode) -> Result<Tensor> {
        check_input(x)?;
        let ds = self.config.input_downsample;
        let xs = if ds > 1 { avg_pool(x, ds)? } else { x.clone() };
        let patches = patchify(&xs, self.config.patch)?;
        let mut h = self.embed.forward(&patches, mode)?;
        if let Some(m) = masks {
            h = apply_mask(&h, m, self.mask_token.value.data())?;
        }
        let (b, t, d) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let pos = self.pos.value.data();
        for i in 0..b {
            for (v, p) in h.item_mut(i).iter_mut().zip(pos) {
                *v += p;
            }
        }
        debug_assert_eq!(t * d, pos.len());
        for blk in &mut self.blocks {
            h = blk.forward(&h, mode)?;
        }
        let out = self.norm.forward(&h, mode)?;
        self.cache = mode.is_train().then(|| TokenCache {
            masks: masks.map(<[Vec<bool>]>::to_vec),
        });
        Ok(out)
    }

    fn backward_tokens(&mut self, grad: &Tensor) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("backward without forward"))?;
        let mut g = self.norm.backward(grad);
        for blk in self.blocks.iter_mut().rev() {
            g = blk.backward(&g);
        }
        let (b, t, d) = (g.shape()[0], g.shape()[1], g.shape()[2]);
        {
            let gp = self.pos.grad.data_mut();
            for i in 0..b {
                for (a, v) in gp.iter_mut().zip(g.item(i)) {
                    *a += v;
                }
            }
        }
        if let Some(masks) = &cache.masks {
            let gm = self.mask_token.grad.data_mut();
            for (i, m) in masks.iter().enumerate() {
                let gi = g.item_mut(i);
                for k in (0..t).filter(|&k| m[k]) {
                    for j in 0..d {
                        gm[j] += gi[k * d + j];
                        gi[k * d + j] = 0.0;
                    }
                }
            }
        }
        self.embed.backward(&g);
        Ok(())
    }

    fn pool_tokens(h: &Tensor) -> Tensor {
        let (b, t, d) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let mut out = Tensor::zeros(&[b, d]);
        for i in 0..b {
            let o = out.item_mut(i);
            for tok in h.item(i).chunks(d) {
                for (a, v) in o.iter_mut().zip(tok) {
                    *a += v / t as f64;
                }
            }
        }
        out
    }

    /// Steering prediction and the `embed_dim` image embedding.
    pub fn vit_forward(&mut self, x: &Tensor, mode: Mode) -> Result<VitOutput> {
        let h = self.encode_tokens(x, None, mode)?;
        let embedding = self.proj.forward(&Self::pool_tokens(&h), mode)?;
        let steering = self.head.forward(&embedding, mode)?;
        Ok(VitOutput { steering, embedding })
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(column(&self.vit_forward(x, Mode::Eval)?.steering))
    }

    /// Reconstruct the full `[B, 3, 224, 224]` image from contextual tokens.
    pub fn reconstruct_tokens(&mut self, h: &Tensor, mode: Mode) -> Result<Tensor> {
        let r = self.recon_mlp.forward(h, mode)?;
        let (b, t, c) = (r.shape()[0], r.shape()[1], r.shape()[2]);
        let g = self.config.grid();
        let img = self
            .recon_up
            .forward(&transpose_tc(&r, t, c)?.reshape(&[b, c, g, g])?, mode)?;
        Ok(upsample_nearest(&img, self.config.input_downsample))
    }

    fn backward_recon(&mut self, grad: &Tensor) -> Result<Tensor> {
        let ds = self.config.input_downsample;
        let g = if ds > 1 { sum_pool(grad, ds) } else { grad.clone() };
        let g = self.recon_up.backward(&g);
        let (b, c) = (g.shape()[0], g.shape()[1]);
        let t = self.config.tokens();
        let g = transpose_tc(&g.reshape(&[b, c, t])?, c, t)?;
        Ok(self.recon_mlp.backward(&g))
    }

    /// Masked reconstruction with explicit masks.
    pub fn reconstruct(&mut self, x: &Tensor, masks: &[Vec<bool>], mode: Mode) -> Result<Tensor> {
        let h = self.encode_tokens(x, Some(masks), mode)?;
        self.reconstruct_tokens(&h, mode)
    }

    fn pretrain_loss(&mut self, x: &Tensor, masks: &[Vec<bool>], mode: Mode, backward: bool) -> Result<f64> {
        let x_hat = self.reconstruct(x, masks, mode)?;
        let (loss, g) = super::losses::l1_per_image(&x_hat, x)?;
        if backward {
            let gh = self.backward_recon(&g)?;
            self.backward_tokens(&gh)?;
        }
        Ok(loss)
    }

    fn steering_loss(&mut self, batch: &Batch, mode: Mode, backward: bool) -> Result<f64> {
        let out = self.vit_forward(&batch.images, mode)?;
        let (loss, g) = super::losses::steering_mse(&out.steering, &batch.steering)?;
        if backward {
            let ge = self.head.backward(&g);
            let gp = self.proj.backward(&ge);
            let (b, d) = (gp.shape()[0], gp.shape()[1]);
            let t = self.config.tokens();
            let mut gh = Tensor::zeros(&[b, t, d]);
            for i in 0..b {
                let src = gp.item(i);
                for tok in gh.item_mut(i).chunks_mut(d) {
                    for (a, v) in tok.iter_mut().zip(src) {
                        *a = v / t as f64;
                    }
                }
            }
            self.backward_tokens(&gh)?;
        }
        Ok(loss)
    }

    /// Fixed masks for a validation batch, derived from its row indices.
    fn eval_masks(&self, batch: &Batch) -> Vec<Vec<bool>> {
        let (g, r) = (self.config.grid(), self.config.mask_ratio);
        batch
            .indices
            .iter()
            .map(|i| group_mask(g, r, &mut seed::rng_for(self.mask_seed, &format!("val/{i}"))))
            .collect()
    }
}

/// `[B, A, B']` to `[B, B', A]`.
fn transpose_tc(x: &Tensor, a: usize, b: usize) -> Result<Tensor> {
    let n = x.batch();
    x.expect_shape(&[n, a, b], "transpose")?;
    let mut out = Tensor::zeros(&[n, b, a]);
    for i in 0..n {
        let src = x.item(i);
        let dst = out.item_mut(i);
        for r in 0..a {
            for c in 0..b {
                dst[c * a + r] = src[r * b + c];
            }
        }
    }
    Ok(out)
}

/// Adjoint of nearest up-sampling: sum each `k x k` block.
fn sum_pool(x: &Tensor, k: usize) -> Tensor {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / k, w / k);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..h {
            for xx in 0..w {
                dst[(p * oh + y / k) * ow + xx / k] += src[(p * h + y) * w + xx];
            }
        }
    }
    out
}

impl Parameterized for VitNet {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.embed.visit_params(&join(prefix, "embed"), f);
        f(&join(prefix, "pos"), &mut self.pos);
        f(&join(prefix, "mask_token"), &mut self.mask_token);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
        self.head.visit_params(&join(prefix, "head"), f);
        self.recon_mlp.visit_params(&join(prefix, "recon_mlp"), f);
        self.recon_up.visit_params(&join(prefix, "recon_up"), f);
    }
}

impl Trainable for VitNet {
    fn batch_loss(&mut self, batch: &Batch, backward: bool) -> Result<f64> {
        match self.objective {
            VitObjective::Steering => self.steering_loss(batch, Mode::Train, backward),
            VitObjective::Pretrain => {
                let masks = self.draw_masks(batch.images.batch());
                self.pretrain_loss(&batch.images, &masks, Mode::Train, backward)
            }
        }
    }

    fn eval_loss(&mut self, batch: &Batch) -> Result<f64> {
        match self.objective {
            VitObjective::Steering => self.steering_loss(batch, Mode::Eval, false),
            VitObjective::Pretrain => {
                let masks = self.eval_masks(batch);
                self.pretrain_loss(&batch.images, &masks, Mode::Eval, false)
            }
        }
    }

    fn reseed(&mut self, seed: u64) {
        self.mask_rng = seed::rng(seed);
    }
}
