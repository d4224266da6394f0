//! Behavior-cloning regressor on top of the autoencoder's encoder.

use super::autoencoder::{build_encoder, Autoencoder, AutoencoderConfig};
use super::{check_input, column, flatten, Trainable};
use crate::augment::Batch;
use crate::error::{Error, Result};
use crate::nn::param::join;
use crate::nn::{ActKind, Dropout, Layer, Linear, Mode, Module, ParamVisitor, Parameterized, Sequential, Tensor};
use crate::seed;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoBcConfig {
    pub encoder: AutoencoderConfig,
    pub hidden: usize,
    pub dropout: f64,
    /// Keep the pre-trained encoder fixed while fitting the head.
    pub freeze_encoder: bool,
}

impl Default for AutoBcConfig {
    fn default() -> Self {
        AutoBcConfig {
            encoder: AutoencoderConfig::default(),
            hidden: 128,
            dropout: 0.3,
            freeze_encoder: false,
        }
    }
}

impl AutoBcConfig {
    pub fn desk() -> Self {
        AutoBcConfig {
            encoder: AutoencoderConfig::desk(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.hidden == 0 {
            return Err(Error::invalid("autobc hidden width must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AutoBc {
    pub config: AutoBcConfig,
    pub encoder: Sequential,
    pub head: Sequential,
}

impl AutoBc {
    pub fn new(config: AutoBcConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed, "init/autobc");
        let encoder = build_encoder(&config.encoder, &mut rng);
        let flat: usize = config.encoder.latent_shape().iter().product();
        let head = Sequential::new(vec![
            Module::Linear(Linear::new(flat, config.hidden, &mut rng)),
            Module::act(ActKind::Elu),
            Module::Dropout(Dropout::new(config.dropout, seed::derive(seed, "dropout"))),
            Module::Linear(Linear::new(config.hidden, 1, &mut rng)),
        ]);
        let mut net = AutoBc { config, encoder, head };
        net.apply_freeze();
        Ok(net)
    }

    /// Start from a trained autoencoder's encoder weights.
    pub fn from_autoencoder(ae: &Autoencoder, mut config: AutoBcConfig, seed: u64) -> Result<Self> {
        config.encoder = ae.config.clone();
        let mut net = AutoBc::new(config, seed)?;
        net.encoder = ae.encoder.clone();
        net.apply_freeze();
        Ok(net)
    }

    fn apply_freeze(&mut self) {
        if self.config.freeze_encoder {
            self.encoder.visit_params("", &mut |_, p| p.trainable = false);
        }
    }

    /// Steering predictions, `[B, 1]`.
    pub fn autobc_forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_input(x)?;
        let enc_mode = if self.config.freeze_encoder { Mode::Eval } else { mode };
        let z = self.encoder.forward(x, enc_mode)?;
        self.head.forward(&flatten(z)?, mode)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(column(&self.autobc_forward(x, Mode::Eval)?))
    }

    fn loss(&mut self, batch: &Batch, mode: Mode, backward: bool) -> Result<f64> {
        let y = self.autobc_forward(&batch.images, mode)?;
        let (loss, g) = super::losses::steering_mse(&y, &batch.steering)?;
        if backward {
            let gz = self.head.backward(&g);
            if !self.config.freeze_encoder {
                let [c, h, w] = self.config.encoder.latent_shape();
                let gz = gz.reshape(&[batch.images.batch(), c, h, w])?;
                self.encoder.backward(&gz);
            }
        }
        Ok(loss)
    }
}

impl Parameterized for AutoBc {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

impl Trainable for AutoBc {
    fn batch_loss(&mut self, batch: &Batch, backward: bool) -> Result<f64> {
        self.loss(batch, Mode::Train, backward)
    }

    fn eval_loss(&mut self, batch: &Batch) -> Result<f64> {
        self.loss(batch, Mode::Eval, false)
    }

    fn reseed(&mut self, seed: u64) {
        for d in self.head.dropouts_mut() {
            d.reseed(seed);
        }
    }
}
