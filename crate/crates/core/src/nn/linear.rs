use super::layer::{Layer, Mode};
use super::param::{join, Param, ParamVisitor, Parameterized};
use super::tensor::{matmul, Tensor};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Affine map over the last axis: `[..., in] -> [..., out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: Param::glorot(&[fan_out, fan_in], fan_in, fan_out, rng),
            bias: Param::zeros(&[fan_out]),
            cache: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let fi = self.fan_in();
        let fo = self.fan_out();
        if x.rank() == 0 || *x.shape().last().unwrap() != fi {
            return Err(Error::shape(format!("linear expects [..., {fi}], got {:?}", x.shape())));
        }
        let rows = x.len() / fi;
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = fo;
        let mut y = Tensor::zeros(&shape);
        {
            let yd = y.data_mut();
            let b = self.bias.value.data();
            for r in 0..rows {
                yd[r * fo..(r + 1) * fo].copy_from_slice(b);
            }
            matmul(rows, fi, fo, x.data(), false, self.weight.value.data(), true, yd, 1.0);
        }
        self.cache = mode.is_train().then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.cache.as_ref().expect("linear backward without train forward");
        let fi = self.fan_in();
        let fo = self.fan_out();
        let rows = x.len() / fi;
        let g = grad.data();
        {
            let db = self.bias.grad.data_mut();
            for r in 0..rows {
                for (d, v) in db.iter_mut().zip(&g[r * fo..(r + 1) * fo]) {
                    *d += v;
                }
            }
        }
        matmul(fo, rows, fi, g, true, x.data(), false, self.weight.grad.data_mut(), 1.0);
        let mut dx = Tensor::zeros(x.shape());
        matmul(
            rows,
            fo,
            fi,
            g,
            false,
            self.weight.value.data(),
            false,
            dx.data_mut(),
            0.0,
        );
        dx
    }
}
