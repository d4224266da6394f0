//! Convolutional autoencoder. The encoder is three conv-ELU-BN-maxpool
//! blocks; the decoder mirrors it with up-sampling and ends in a transposed
//! convolution with a sigmoid.

use super::{check_downsample, check_input, unit_range, Trainable, INPUT};
use crate::augment::Batch;
use crate::error::{Error, Result};
use crate::nn::pool::upsample_nearest;
use crate::nn::{
    ActKind, AvgPool, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, MaxPool2, Mode, Module, ParamVisitor, Parameterized,
    Sequential, Tensor, Upsample,
};
use crate::seed;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    /// Channel counts of the three encoder blocks.
    pub widths: [usize; 3],
    /// Average-pool factor applied to the 224x224 input before the encoder;
    /// reconstructions are up-sampled back by the same factor.
    pub input_downsample: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            widths: [32, 64, 128],
            input_downsample: 1,
        }
    }
}

impl AutoencoderConfig {
    /// Reduced widths and a 4x input pool for single-core runs.
    pub fn desk() -> Self {
        AutoencoderConfig {
            widths: [8, 16, 32],
            input_downsample: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_downsample(self.input_downsample, "autoencoder")?;
        if self.widths.contains(&0) {
            return Err(Error::invalid("autoencoder widths must be positive"));
        }
        if !(INPUT / self.input_downsample).is_multiple_of(8) {
            return Err(Error::invalid("autoencoder input side must be divisible by 8"));
        }
        Ok(())
    }

    /// Shape of one latent code, `[C, H, W]`.
    pub fn latent_shape(&self) -> [usize; 3] {
        let side = INPUT / self.input_downsample / 8;
        [self.widths[2], side, side]
    }
}

pub(crate) fn build_encoder(cfg: &AutoencoderConfig, rng: &mut seed::Rng) -> Sequential {
    let mut enc = Sequential::default();
    if cfg.input_downsample > 1 {
        enc.push(Module::AvgPool(AvgPool::new(cfg.input_downsample)));
    }
    let mut cin = 3;
    for (i, &w) in cfg.widths.iter().enumerate() {
        let conv = Conv2d::new(cin, w, 3, 1, 1, rng);
        enc.push(Module::Conv(if i == 0 { conv.without_input_grad() } else { conv }));
        enc.push(Module::act(ActKind::Elu));
        enc.push(Module::BatchNorm(BatchNorm2d::new(w)));
        enc.push(Module::MaxPool(MaxPool2::new()));
        cin = w;
    }
    enc
}

fn build_decoder(cfg: &AutoencoderConfig, rng: &mut seed::Rng) -> Sequential {
    let [w0, w1, w2] = cfg.widths;
    let mut dec = Sequential::default();
    for (cin, cout) in [(w2, w2), (w2, w1), (w1, w0)] {
        dec.push(Module::Conv(Conv2d::new(cin, cout, 3, 1, 1, rng)));
        dec.push(Module::act(ActKind::Elu));
        dec.push(Module::BatchNorm(BatchNorm2d::new(cout)));
        dec.push(Module::Upsample(Upsample::new(2)));
    }
    dec.push(Module::ConvT(ConvTranspose2d::new(w0, 3, 3, 1, 1, rng)));
    dec.push(Module::act(ActKind::Sigmoid));
    dec
}

#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

impl Autoencoder {
    pub fn new(config: AutoencoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed, "init/autoencoder");
        Ok(Autoencoder {
            encoder: build_encoder(&config, &mut rng),
            decoder: build_decoder(&config, &mut rng),
            config,
        })
    }

    /// `[B, 3, 224, 224]` normalized images to latent codes.
    pub fn ae_encode(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_input(x)?;
        self.encoder.forward(x, mode)
    }

    /// Latent codes to reconstructions in `[0, 1]`, `[B, 3, 224, 224]`.
    pub fn ae_decode(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let small = self.decode_native(z, mode)?;
        Ok(upsample_nearest(&small, self.config.input_downsample))
    }

    /// Reconstruction at the pooled input resolution.
    fn decode_native(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let [c, h, w] = self.config.latent_shape();
        z.expect_nchw(Some(c), Some(h), Some(w), "latent code")?;
        self.decoder.forward(z, mode)
    }

    pub fn reconstruct(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let z = self.ae_encode(x, mode)?;
        self.ae_decode(&z, mode)
    }

    fn loss(&mut self, batch: &Batch, mode: Mode, backward: bool) -> Result<f64> {
        let z = self.ae_encode(&batch.images, mode)?;
        let x_hat = self.decode_native(&z, mode)?;
        let (loss, g) = super::losses::mse_upsampled(&x_hat, &unit_range(&batch.images), self.config.input_downsample)?;
        if backward {
            let gz = self.decoder.backward(&g);
            self.encoder.backward(&gz);
        }
        Ok(loss)
    }
}

impl Parameterized for Autoencoder {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.encoder.visit_params(&crate::nn::param::join(prefix, "encoder"), f);
        self.decoder.visit_params(&crate::nn::param::join(prefix, "decoder"), f);
    }
}

impl Trainable for Autoencoder {
    fn batch_loss(&mut self, batch: &Batch, backward: bool) -> Result<f64> {
        self.loss(batch, Mode::Train, backward)
    }

    fn eval_loss(&mut self, batch: &Batch) -> Result<f64> {
        self.loss(batch, Mode::Eval, false)
    }

    fn reseed(&mut self, _seed: u64) {}
}
