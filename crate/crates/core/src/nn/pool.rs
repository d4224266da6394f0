use super::layer::{no_params, Layer, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// 2x2 max pooling with stride 2 (odd trailing rows/cols are dropped).
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<u32>)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }
}

/// `k x k` average pooling with stride `k`.
#[derive(Clone, Debug)]
pub struct AvgPool {
    pub factor: usize,
    input_shape: Option<Vec<usize>>,
}

impl AvgPool {
    pub fn new(factor: usize) -> Self {
        AvgPool {
            factor,
            input_shape: None,
        }
    }
}

/// Nearest-neighbour up-sampling by an integer factor.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub factor: usize,
}

impl Upsample {
    pub fn new(factor: usize) -> Self {
        Upsample { factor }
    }
}

no_params!(MaxPool2, AvgPool, Upsample);

impl Layer for MaxPool2 {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        x.expect_nchw(None, None, None, "maxpool input")?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        let mut arg = if mode.is_train() {
            vec![0u32; n * c * ho * wo]
        } else {
            Vec::new()
        };
        let xd = x.data();
        let yd = y.data_mut();
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i0 = base + (2 * oy) * w + 2 * ox;
                    let cand = [i0, i0 + 1, i0 + w, i0 + w + 1];
                    let mut best = cand[0];
                    for &ci in &cand[1..] {
                        if xd[ci] > xd[best] {
                            best = ci;
                        }
                    }
                    let o = (nc * ho + oy) * wo + ox;
                    yd[o] = xd[best];
                    if !arg.is_empty() {
                        arg[o] = (best - base) as u32;
                    }
                }
            }
        }
        self.cache = mode.is_train().then(|| (x.shape().to_vec(), arg));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.as_ref().expect("maxpool backward without train forward");
        let (h, w) = (shape[2], shape[3]);
        let mut dx = Tensor::zeros(shape);
        let plane_out = grad.shape()[2] * grad.shape()[3];
        let dd = dx.data_mut();
        for (o, g) in grad.data().iter().enumerate() {
            let nc = o / plane_out;
            dd[nc * h * w + arg[o] as usize] += g;
        }
        dx
    }
}

impl Layer for AvgPool {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        x.expect_nchw(None, None, None, "avgpool input")?;
        let k = self.factor;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if h % k != 0 || w % k != 0 {
            return Err(Error::shape(format!("avgpool factor {k} does not divide {h}x{w}")));
        }
        if k == 1 {
            self.input_shape = Some(x.shape().to_vec());
            return Ok(x.clone());
        }
        let (ho, wo) = (h / k, w / k);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        let inv = 1.0 / (k * k) as f64;
        let xd = x.data();
        let yd = y.data_mut();
        for nc in 0..n * c {
            for iy in 0..h {
                let oy = iy / k;
                let src = &xd[(nc * h + iy) * w..(nc * h + iy + 1) * w];
                let dst = &mut yd[(nc * ho + oy) * wo..(nc * ho + oy + 1) * wo];
                for (ix, v) in src.iter().enumerate() {
                    dst[ix / k] += v;
                }
            }
        }
        yd.iter_mut().for_each(|v| *v *= inv);
        self.input_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let shape = self.input_shape.as_ref().expect("avgpool backward without forward");
        let k = self.factor;
        if k == 1 {
            return grad.clone();
        }
        let (h, w) = (shape[2], shape[3]);
        let (ho, wo) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let mut dx = Tensor::zeros(shape);
        let gd = grad.data();
        let dd = dx.data_mut();
        for nc in 0..shape[0] * shape[1] {
            for iy in 0..h {
                let src = &gd[(nc * ho + iy / k) * wo..(nc * ho + iy / k + 1) * wo];
                let dst = &mut dd[(nc * h + iy) * w..(nc * h + iy + 1) * w];
                for (ix, d) in dst.iter_mut().enumerate() {
                    *d = src[ix / k] * inv;
                }
            }
        }
        dx
    }
}

impl Layer for Upsample {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        x.expect_nchw(None, None, None, "upsample input")?;
        Ok(upsample_nearest(x, self.factor))
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let k = self.factor;
        let (n, c, h, w) = (grad.shape()[0], grad.shape()[1], grad.shape()[2], grad.shape()[3]);
        let (hi, wi) = (h / k, w / k);
        let mut dx = Tensor::zeros(&[n, c, hi, wi]);
        let gd = grad.data();
        let dd = dx.data_mut();
        for nc in 0..n * c {
            for y in 0..h {
                let src = &gd[(nc * h + y) * w..(nc * h + y + 1) * w];
                let dst = &mut dd[(nc * hi + y / k) * wi..(nc * hi + y / k + 1) * wi];
                for (x, v) in src.iter().enumerate() {
                    dst[x / k] += v;
                }
            }
        }
        dx
    }
}

pub fn upsample_nearest(x: &Tensor, k: usize) -> Tensor {
    if k == 1 {
        return x.clone();
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h * k, w * k);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let xd = x.data();
    let yd = y.data_mut();
    for nc in 0..n * c {
        for oy in 0..ho {
            let src = &xd[(nc * h + oy / k) * w..(nc * h + oy / k + 1) * w];
            let dst = &mut yd[(nc * ho + oy) * wo..(nc * ho + oy + 1) * wo];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / k];
            }
        }
    }
    y
}

/// Average-pool a tensor without layer bookkeeping.
pub fn avg_pool(x: &Tensor, k: usize) -> Result<Tensor> {
    AvgPool::new(k).forward(x, Mode::Eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_window_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, -1.0]).unwrap();
        let mut p = MaxPool2::new();
        let y = p.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0]);
        let dx = p.backward(&Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn avgpool_then_upsample_preserves_block_means() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let y = avg_pool(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(upsample_nearest(&y, 2).data(), &[3.0; 4]);
    }
}
