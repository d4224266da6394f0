use super::layer::{no_params, Layer, Mode};
use super::tensor::Tensor;
use crate::error::Result;
use crate::seed::{self, Rng};
use rand::Rng as _;

/// Inverted dropout. The mask stream is owned by the layer and can be reset
/// with [`Dropout::reseed`] to replay identical masks.
#[derive(Clone, Debug)]
pub struct Dropout {
    pub rate: f64,
    rng: Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: seed::rng(seed),
            mask: None,
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = seed::rng(seed);
    }
}

no_params!(Dropout);

impl Layer for Dropout {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if !mode.is_train() || self.rate <= 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if self.rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut dx = grad.clone();
        if let Some(mask) = &self.mask {
            dx.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        dx
    }
}
