use super::layer::{Layer, Mode};
use super::param::{join, Param, ParamVisitor, Parameterized};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    train: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::full(&[channels], 1.0)),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl Parameterized for BatchNorm2d {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels();
        x.expect_nchw(Some(c), None, None, "batchnorm input")?;
        let n = x.shape()[0];
        let plane = x.shape()[2] * x.shape()[3];
        let m = (n * plane) as f64;
        let (mean, var) = if mode.is_train() {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for i in 0..n {
                let xi = x.item(i);
                for ch in 0..c {
                    mean[ch] += xi[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for i in 0..n {
                let xi = x.item(i);
                for ch in 0..c {
                    let mu = mean[ch];
                    var[ch] += xi[ch * plane..(ch + 1) * plane]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            let mom = self.momentum;
            for ch in 0..c {
                let rm = &mut self.running_mean.value.data_mut()[ch];
                *rm = (1.0 - mom) * *rm + mom * mean[ch];
                let rv = &mut self.running_var.value.data_mut()[ch];
                *rv = (1.0 - mom) * *rv + mom * var[ch];
            }
            (mean, var)
        } else {
            (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        for i in 0..n {
            let xi = x.item(i);
            let hi = xhat.item_mut(i);
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                for j in ch * plane..(ch + 1) * plane {
                    hi[j] = (xi[j] - mu) * is;
                }
            }
            let yi = y.item_mut(i);
            for ch in 0..c {
                for j in ch * plane..(ch + 1) * plane {
                    yi[j] = g[ch] * hi[j] + b[ch];
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            train: mode.is_train(),
        });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("batchnorm backward without forward");
        let c = self.channels();
        let n = grad.shape()[0];
        let plane = grad.shape()[2] * grad.shape()[3];
        let m = (n * plane) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for i in 0..n {
            let gi = grad.item(i);
            let hi = cache.xhat.item(i);
            for ch in 0..c {
                for j in ch * plane..(ch + 1) * plane {
                    sum_dy[ch] += gi[j];
                    sum_dy_xhat[ch] += gi[j] * hi[j];
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat[ch];
            self.beta.grad.data_mut()[ch] += sum_dy[ch];
        }
        let g = self.gamma.value.data();
        let mut dx = Tensor::zeros(grad.shape());
        for i in 0..n {
            let gi = grad.item(i);
            let hi = cache.xhat.item(i);
            let di = dx.item_mut(i);
            for ch in 0..c {
                let k = g[ch] * cache.inv_std[ch];
                if cache.train {
                    let (a, b) = (sum_dy[ch] / m, sum_dy_xhat[ch] / m);
                    for j in ch * plane..(ch + 1) * plane {
                        di[j] = k * (gi[j] - a - hi[j] * b);
                    }
                } else {
                    for j in ch * plane..(ch + 1) * plane {
                        di[j] = k * gi[j];
                    }
                }
            }
        }
        dx
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    cache: Option<(Tensor, Vec<f64>)>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(Tensor::full(&[dim], 1.0)),
            beta: Param::zeros(&[dim]),
            eps: 1e-5,
            cache: None,
        }
    }
}

impl Parameterized for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

impl Layer for LayerNorm {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let d = self.gamma.value.len();
        if x.rank() == 0 || *x.shape().last().unwrap() != d {
            return Err(Error::shape(format!(
                "layernorm expects [..., {d}], got {:?}",
                x.shape()
            )));
        }
        let rows = x.len() / d;
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv = Vec::with_capacity(rows);
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..rows {
            let xr = &x.data()[r * d..(r + 1) * d];
            let mu = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + self.eps).sqrt();
            inv.push(is);
            let hr = &mut xhat.data_mut()[r * d..(r + 1) * d];
            for j in 0..d {
                hr[j] = (xr[j] - mu) * is;
            }
            let yr = &mut y.data_mut()[r * d..(r + 1) * d];
            let hr = &xhat.data()[r * d..(r + 1) * d];
            for j in 0..d {
                yr[j] = g[j] * hr[j] + b[j];
            }
        }
        self.cache = mode.is_train().then_some((xhat, inv));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, inv) = self.cache.as_ref().expect("layernorm backward without train forward");
        let d = self.gamma.value.len();
        let rows = grad.len() / d;
        let mut dx = Tensor::zeros(grad.shape());
        let g = self.gamma.value.data().to_vec();
        for r in 0..rows {
            let gr = &grad.data()[r * d..(r + 1) * d];
            let hr = &xhat.data()[r * d..(r + 1) * d];
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for j in 0..d {
                let dh = gr[j] * g[j];
                s1 += dh;
                s2 += dh * hr[j];
                self.gamma.grad.data_mut()[j] += gr[j] * hr[j];
                self.beta.grad.data_mut()[j] += gr[j];
            }
            let dr = &mut dx.data_mut()[r * d..(r + 1) * d];
            let df = d as f64;
            for j in 0..d {
                let dh = gr[j] * g[j];
                dr[j] = inv[r] * (dh - s1 / df - hr[j] * s2 / df);
            }
        }
        dx
    }
}
