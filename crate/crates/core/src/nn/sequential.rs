use super::activation::{ActKind, Activation};
use super::conv::{Conv2d, ConvTranspose2d};
use super::dropout::Dropout;
use super::layer::{Layer, Mode};
use super::linear::Linear;
use super::norm::{BatchNorm2d, LayerNorm};
use super::param::{join, ParamVisitor, Parameterized};
use super::pool::{AvgPool, MaxPool2, Upsample};
use super::tensor::Tensor;
use crate::error::Result;

/// Closed set of layers a [`Sequential`] can hold.
#[derive(Clone, Debug)]
pub enum Module {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    Linear(Linear),
    BatchNorm(BatchNorm2d),
    LayerNorm(LayerNorm),
    Act(Activation),
    MaxPool(MaxPool2),
    AvgPool(AvgPool),
    Upsample(Upsample),
    Dropout(Dropout),
}

impl Module {
    pub fn act(kind: ActKind) -> Self {
        Module::Act(Activation::new(kind))
    }

    fn layer(&mut self) -> &mut dyn Layer {
        match self {
            Module::Conv(l) => l,
            Module::ConvT(l) => l,
            Module::Linear(l) => l,
            Module::BatchNorm(l) => l,
            Module::LayerNorm(l) => l,
            Module::Act(l) => l,
            Module::MaxPool(l) => l,
            Module::AvgPool(l) => l,
            Module::Upsample(l) => l,
            Module::Dropout(l) => l,
        }
    }
}

/// Layers applied in order; parameters are named by position (`"3.weight"`).
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Module>,
}

impl Sequential {
    pub fn new(layers: Vec<Module>) -> Self {
        Sequential { layers }
    }

    pub fn push(&mut self, m: Module) {
        self.layers.push(m);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn dropouts_mut(&mut self) -> impl Iterator<Item = &mut Dropout> {
        self.layers.iter_mut().filter_map(|m| match m {
            Module::Dropout(d) => Some(d),
            _ => None,
        })
    }
}

impl Parameterized for Sequential {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        for (i, m) in self.layers.iter_mut().enumerate() {
            m.layer().visit_params(&join(prefix, &i.to_string()), f);
        }
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut it = self.layers.iter_mut();
        let Some(first) = it.next() else {
            return Ok(x.clone());
        };
        let mut h = first.layer().forward(x, mode)?;
        for m in it {
            h = m.layer().forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for m in self.layers.iter_mut().rev() {
            // a layer that skips its input gradient ends propagation
            if g.is_empty() {
                break;
            }
            g = m.layer().backward(&g);
        }
        g
    }
}
