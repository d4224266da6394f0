//! The four model families and their checkpoint container.

pub mod autobc;
pub mod autoencoder;
pub mod bundle;
pub mod losses;
pub mod spatial;
pub mod vit;

use crate::augment::Batch;
use crate::error::{Error, Result};
use crate::nn::{Parameterized, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use autobc::{AutoBc, AutoBcConfig};
pub use autoencoder::{Autoencoder, AutoencoderConfig};
pub use bundle::{ModelBundle, ModelConfig, Network};
pub use losses::{ae_loss, sit_recon_loss};
pub use spatial::{spatial_fuse, SpatialConfig, SpatialNet};
pub use vit::{group_mask, patchify, unpatchify, HeadVariant, VitConfig, VitNet};

pub const INPUT: usize = crate::image::IMAGE_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Autoencoder,
    Autobc,
    AutobcSpatial,
    Vit,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Autoencoder, Arch::Autobc, Arch::AutobcSpatial, Arch::Vit];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Autoencoder => "autoencoder",
            Arch::Autobc => "autobc",
            Arch::AutobcSpatial => "autobc_spatial",
            Arch::Vit => "vit",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "autoencoder" | "ae" => Ok(Arch::Autoencoder),
            "autobc" => Ok(Arch::Autobc),
            "autobc_spatial" | "spatial" => Ok(Arch::AutobcSpatial),
            "vit" => Ok(Arch::Vit),
            _ => Err(Error::invalid(format!(
                "unknown arch `{s}` (expected autoencoder, autobc, autobc_spatial or vit)"
            ))),
        }
    }
}

/// A network that can be fitted by the generic training loop.
pub trait Trainable: Parameterized {
    /// Training-mode loss on `batch`; with `backward` set, gradients are
    /// accumulated into the parameters.
    fn batch_loss(&mut self, batch: &Batch, backward: bool) -> Result<f64>;

    /// Evaluation-mode loss, deterministic for a given batch.
    fn eval_loss(&mut self, batch: &Batch) -> Result<f64>;

    /// Reset internal random streams (dropout, token masking).
    fn reseed(&mut self, seed: u64);
}

/// Flatten `[B, ...]` to `[B, rest]`.
pub(crate) fn flatten(x: Tensor) -> Result<Tensor> {
    let b = x.batch();
    let rest = x.item_len();
    x.reshape(&[b, rest])
}

/// `[B, 1]` output as a plain vector.
pub(crate) fn column(x: &Tensor) -> Vec<f64> {
    x.data().to_vec()
}

pub(crate) fn check_input(x: &Tensor) -> Result<()> {
    x.expect_nchw(Some(3), Some(INPUT), Some(INPUT), "model input")
}

/// Images shifted from `[-0.5, 0.5]` to `[0, 1]`, the range of sigmoid outputs.
pub(crate) fn unit_range(x: &Tensor) -> Tensor {
    x.map(|v| v + 0.5)
}

pub(crate) fn check_downsample(ds: usize, what: &str) -> Result<()> {
    if ds == 0 || !INPUT.is_multiple_of(ds) {
        return Err(Error::invalid(format!(
            "{what}: input_downsample {ds} must divide {INPUT}"
        )));
    }
    Ok(())
}
