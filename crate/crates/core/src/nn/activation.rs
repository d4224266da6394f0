use super::layer::{no_params, Layer, Mode};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActKind {
    Elu,
    Relu,
    Gelu,
    Sigmoid,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Elementwise activation; caches its input (or output for sigmoid).
#[derive(Clone, Debug)]
pub struct Activation {
    pub kind: ActKind,
    cache: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActKind) -> Self {
        Activation { kind, cache: None }
    }
}

no_params!(Activation);

impl Layer for Activation {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = match self.kind {
            ActKind::Elu => x.map(elu),
            ActKind::Relu => x.map(|v| v.max(0.0)),
            ActKind::Gelu => x.map(gelu),
            ActKind::Sigmoid => x.map(sigmoid),
        };
        self.cache = if mode.is_train() {
            Some(if self.kind == ActKind::Sigmoid {
                y.clone()
            } else {
                x.clone()
            })
        } else {
            None
        };
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let c = self.cache.as_ref().expect("activation backward without train forward");
        let mut dx = grad.clone();
        let d = dx.data_mut();
        let cd = c.data();
        match self.kind {
            ActKind::Elu => d.iter_mut().zip(cd).for_each(|(g, &x)| {
                if x <= 0.0 {
                    *g *= x.exp()
                }
            }),
            ActKind::Relu => d.iter_mut().zip(cd).for_each(|(g, &x)| {
                if x <= 0.0 {
                    *g = 0.0
                }
            }),
            ActKind::Gelu => d.iter_mut().zip(cd).for_each(|(g, &x)| *g *= gelu_grad(x)),
            ActKind::Sigmoid => d.iter_mut().zip(cd).for_each(|(g, &y)| *g *= y * (1.0 - y)),
        }
        dx
    }
}
