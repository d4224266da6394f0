//! AutoBC with spatial attention: a residual backbone produces a feature map
//! `Z`, a mask head predicts the lane-line map `M`, and the regressor sees
//! `Z * pool(M) + Z`. A reconstruction head regularizes the backbone during
//! training.

use super::{check_downsample, check_input, column, flatten, unit_range, Trainable, INPUT};
use crate::augment::Batch;
use crate::error::{Error, Result};
use crate::nn::param::join;
use crate::nn::pool::upsample_nearest;
use crate::nn::{
    ActKind, Activation, AvgPool, BatchNorm2d, Conv2d, Layer, Linear, MaxPool2, Mode, Module, ParamVisitor,
    Parameterized, Sequential, Tensor, Upsample,
};
use crate::seed::{self, Rng};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    pub input_downsample: usize,
    pub stem_width: usize,
    pub blocks: usize,
    /// Channels of the fused feature map.
    pub feature_channels: usize,
    /// Hidden channels of the mask and reconstruction heads.
    pub head_width: usize,
    pub recon_weight: f64,
    pub mask_weight: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        SpatialConfig {
            input_downsample: 1,
            stem_width: 64,
            blocks: 2,
            feature_channels: 256,
            head_width: 32,
            recon_weight: 1.0,
            mask_weight: 1.0,
        }
    }
}

impl SpatialConfig {
    pub fn desk() -> Self {
        SpatialConfig {
            input_downsample: 4,
            stem_width: 8,
            blocks: 1,
            feature_channels: 8,
            head_width: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_downsample(self.input_downsample, "autobc_spatial")?;
        if !(INPUT / self.input_downsample).is_multiple_of(4) {
            return Err(Error::invalid("autobc_spatial input side must be divisible by 4"));
        }
        if self.stem_width == 0 || self.feature_channels == 0 || self.head_width == 0 {
            return Err(Error::invalid("autobc_spatial widths must be positive"));
        }
        if self.recon_weight < 0.0 || self.mask_weight < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }

    /// Side of the square feature map.
    pub fn feature_side(&self) -> usize {
        INPUT / self.input_downsample / 4
    }

    /// `[C, H, W]` of the feature map.
    pub fn feature_shape(&self) -> [usize; 3] {
        let s = self.feature_side();
        [self.feature_channels, s, s]
    }
}

/// `Z * M + Z`, with the single-channel `M` broadcast across channels.
pub fn spatial_fuse(z: &Tensor, m: &Tensor) -> Result<Tensor> {
    z.expect_nchw(None, None, None, "feature map")?;
    let (b, c, h, w) = (z.shape()[0], z.shape()[1], z.shape()[2], z.shape()[3]);
    m.expect_shape(&[b, 1, h, w], "attention map")?;
    let plane = h * w;
    let mut out = z.clone();
    for i in 0..b {
        let mi = m.item(i);
        for ch in out.item_mut(i).chunks_mut(plane).take(c) {
            for (v, a) in ch.iter_mut().zip(mi) {
                *v += *v * a;
            }
        }
    }
    Ok(out)
}

/// Two 3x3 conv-BN layers with an identity shortcut.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    act1: Activation,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    act_out: Activation,
}

impl BasicBlock {
    fn new(c: usize, rng: &mut Rng) -> Self {
        BasicBlock {
            conv1: Conv2d::new(c, c, 3, 1, 1, rng),
            bn1: BatchNorm2d::new(c),
            act1: Activation::new(ActKind::Relu),
            conv2: Conv2d::new(c, c, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(c),
            act_out: Activation::new(ActKind::Relu),
        }
    }
}

impl Parameterized for BasicBlock {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
    }
}

impl Layer for BasicBlock {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.conv1.forward(x, mode)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.act1.forward(&h, mode)?;
        let h = self.conv2.forward(&h, mode)?;
        let mut h = self.bn2.forward(&h, mode)?;
        h.add_assign(x);
        self.act_out.forward(&h, mode)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.act_out.backward(grad);
        let h = self.conv2.backward(&self.bn2.backward(&g));
        let mut dx = self.conv1.backward(&self.bn1.backward(&self.act1.backward(&h)));
        dx.add_assign(&g);
        dx
    }
}

/// Predictions of one forward pass.
#[derive(Clone, Debug)]
pub struct SpatialOutput {
    /// `[B, 1]`.
    pub steering: Tensor,
    /// `[B, 1, 224, 224]` in `[0, 1]`.
    pub mask: Tensor,
    /// `[B, 3, 224, 224]` in `[0, 1]`, when requested.
    pub recon: Option<Tensor>,
}

#[derive(Clone, Debug)]
struct FuseCache {
    z: Tensor,
    pooled: Tensor,
}

#[derive(Clone, Debug)]
pub struct SpatialNet {
    pub config: SpatialConfig,
    pub stem: Sequential,
    pub blocks: Vec<BasicBlock>,
    pub expand: Sequential,
    pub mask_head: Sequential,
    pub recon_head: Sequential,
    pub fc: Linear,
    mask_pool: AvgPool,
    cache: Option<FuseCache>,
}

fn head(cfg: &SpatialConfig, cout: usize, rng: &mut Rng) -> Sequential {
    Sequential::new(vec![
        Module::Conv(Conv2d::new(cfg.feature_channels, cfg.head_width, 3, 1, 1, rng)),
        Module::act(ActKind::Relu),
        Module::Upsample(Upsample::new(4)),
        Module::Conv(Conv2d::new(cfg.head_width, cout, 3, 1, 1, rng)),
        Module::act(ActKind::Sigmoid),
    ])
}

impl SpatialNet {
    pub fn new(config: SpatialConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed, "init/autobc_spatial");
        let w = config.stem_width;
        let mut stem = Sequential::default();
        if config.input_downsample > 1 {
            stem.push(Module::AvgPool(AvgPool::new(config.input_downsample)));
        }
        stem.push(Module::Conv(Conv2d::new(3, w, 3, 2, 1, &mut rng).without_input_grad()));
        stem.push(Module::BatchNorm(BatchNorm2d::new(w)));
        stem.push(Module::act(ActKind::Relu));
        stem.push(Module::MaxPool(MaxPool2::new()));
        let blocks = (0..config.blocks).map(|_| BasicBlock::new(w, &mut rng)).collect();
        let expand = Sequential::new(vec![
            Module::Conv(Conv2d::new(w, config.feature_channels, 1, 1, 0, &mut rng)),
            Module::BatchNorm(BatchNorm2d::new(config.feature_channels)),
            Module::act(ActKind::Relu),
        ]);
        let mask_head = head(&config, 1, &mut rng);
        let recon_head = head(&config, 3, &mut rng);
        let flat: usize = config.feature_shape().iter().product();
        let fc = Linear::new(flat, 1, &mut rng);
        let mask_pool = AvgPool::new(4);
        Ok(SpatialNet {
            config,
            stem,
            blocks,
            expand,
            mask_head,
            recon_head,
            fc,
            mask_pool,
            cache: None,
        })
    }

    /// The feature map `Z`, `[B, C, H, W]`.
    pub fn features(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_input(x)?;
        let mut h = self.stem.forward(x, mode)?;
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        self.expand.forward(&h, mode)
    }

    fn backward_features(&mut self, grad: &Tensor) {
        let mut g = self.expand.backward(grad);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g);
        }
        self.stem.backward(&g);
    }

    /// Heads at the pooled input resolution; `mask` is what the fusion sees
    /// after pooling to the feature grid.
    fn forward_native(&mut self, x: &Tensor, mode: Mode, with_recon: bool) -> Result<SpatialOutput> {
        let z = self.features(x, mode)?;
        let mask = self.mask_head.forward(&z, mode)?;
        let pooled = self.mask_pool.forward(&mask, mode)?;
        let fused = spatial_fuse(&z, &pooled)?;
        let steering = self.fc.forward(&flatten(fused)?, mode)?;
        let recon = if with_recon {
            Some(self.recon_head.forward(&z, mode)?)
        } else {
            None
        };
        self.cache = mode.is_train().then_some(FuseCache { z, pooled });
        Ok(SpatialOutput { steering, mask, recon })
    }

    /// Steering, lane mask and (optionally) reconstruction at full size. The
    /// fused mask is the 224x224 mask average-pooled onto the feature grid.
    pub fn spattn_forward(&mut self, x: &Tensor, mode: Mode, with_recon: bool) -> Result<SpatialOutput> {
        let ds = self.config.input_downsample;
        let out = self.forward_native(x, mode, with_recon)?;
        Ok(SpatialOutput {
            steering: out.steering,
            mask: upsample_nearest(&out.mask, ds),
            recon: out.recon.map(|r| upsample_nearest(&r, ds)),
        })
    }

    /// The same regressor applied to `Z` with the attention path removed.
    pub fn forward_without_attention(&mut self, x: &Tensor) -> Result<Tensor> {
        let z = self.features(x, Mode::Eval)?;
        self.fc.forward(&flatten(z)?, Mode::Eval)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(column(&self.spattn_forward(x, Mode::Eval, false)?.steering))
    }

    /// Gradients of the three outputs back into every parameter.
    fn backward(&mut self, g_steer: &Tensor, g_mask: &Tensor, g_recon: Option<&Tensor>) -> Result<()> {
        let FuseCache { z, pooled } = self
            .cache
            .take()
            .ok_or_else(|| Error::invalid("backward without forward"))?;
        let g_fused = self.fc.backward(g_steer).reshape(z.shape())?;
        let (b, c) = (z.shape()[0], z.shape()[1]);
        let plane = z.shape()[2] * z.shape()[3];
        let mut g_z = Tensor::zeros(z.shape());
        let mut g_pooled = Tensor::zeros(pooled.shape());
        for i in 0..b {
            let (zi, gi, mi) = (z.item(i), g_fused.item(i), pooled.item(i));
            let gp = g_pooled.item_mut(i);
            let gz = g_z.item_mut(i);
            for ch in 0..c {
                for p in 0..plane {
                    let k = ch * plane + p;
                    gz[k] = gi[k] * (1.0 + mi[p]);
                    gp[p] += gi[k] * zi[k];
                }
            }
        }
        let mut g_m = self.mask_pool.backward(&g_pooled);
        g_m.add_assign(g_mask);
        g_z.add_assign(&self.mask_head.backward(&g_m));
        if let Some(gr) = g_recon {
            g_z.add_assign(&self.recon_head.backward(gr));
        }
        self.backward_features(&g_z);
        Ok(())
    }

    fn loss(&mut self, batch: &Batch, mode: Mode, backward: bool) -> Result<f64> {
        let target_mask = batch
            .masks
            .as_ref()
            .ok_or_else(|| Error::invalid("autobc_spatial needs lane masks (generate data with masks)"))?;
        let cfg = self.config.clone();
        let with_recon = cfg.recon_weight > 0.0;
        let ds = cfg.input_downsample;
        let out = self.forward_native(&batch.images, mode, with_recon)?;
        let (l_steer, g_steer) = super::losses::steering_mse(&out.steering, &batch.steering)?;
        let (l_mask, g_mask) = super::losses::bce_upsampled(&out.mask, target_mask, ds)?;
        let mut loss = l_steer + cfg.mask_weight * l_mask;
        let mut g_recon = None;
        if let Some(r) = &out.recon {
            let (l_rec, g) = super::losses::mse_upsampled(r, &unit_range(&batch.images), ds)?;
            loss += cfg.recon_weight * l_rec;
            g_recon = Some(g.scale(cfg.recon_weight));
        }
        if backward {
            self.backward(&g_steer, &g_mask.scale(cfg.mask_weight), g_recon.as_ref())?;
        }
        Ok(loss)
    }
}

impl Parameterized for SpatialNet {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.expand.visit_params(&join(prefix, "expand"), f);
        self.mask_head.visit_params(&join(prefix, "mask_head"), f);
        self.recon_head.visit_params(&join(prefix, "recon_head"), f);
        self.fc.visit_params(&join(prefix, "fc"), f);
    }
}

impl Trainable for SpatialNet {
    fn batch_loss(&mut self, batch: &Batch, backward: bool) -> Result<f64> {
        self.loss(batch, Mode::Train, backward)
    }

    fn eval_loss(&mut self, batch: &Batch) -> Result<f64> {
        self.loss(batch, Mode::Eval, false)
    }

    fn reseed(&mut self, _seed: u64) {}
}
