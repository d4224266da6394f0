use super::layer::{Layer, Mode};
use super::param::{join, Param, ParamVisitor, Parameterized};
use super::tensor::{matmul, Tensor};
use crate::error::Result;
use crate::seed::Rng;

/// Output extent of a convolution along one axis.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Unfold `[c, h, w]` into `[c*k*k, ho*wo]` patch columns.
#[allow(clippy::too_many_arguments)]
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, out: &mut [f64]) {
    let ho = conv_out(h, k, s, p);
    let wo = conv_out(w, k, s, p);
    let plane = ho * wo;
    debug_assert_eq!(out.len(), c * k * k * plane);
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * plane..(row + 1) * plane];
                // valid ox satisfy 0 <= ox*s + kx - p < w
                let ox_lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
                let ox_hi = if w + p > kx {
                    ((w + p - kx - 1) / s + 1).min(wo)
                } else {
                    0
                };
                for oy in 0..ho {
                    let d = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize || ox_lo >= ox_hi {
                        d.fill(0.0);
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    d[..ox_lo].fill(0.0);
                    d[ox_hi..].fill(0.0);
                    if s == 1 {
                        let ix0 = ox_lo + kx - p;
                        d[ox_lo..ox_hi].copy_from_slice(&srow[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            d[ox] = srow[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[c, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, p: usize, out: &mut [f64]) {
    let ho = conv_out(h, k, s, p);
    let wo = conv_out(w, k, s, p);
    let plane = ho * wo;
    out.fill(0.0);
    for ci in 0..c {
        let dst = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let ox_lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
                let ox_hi = if w + p > kx {
                    ((w + p - kx - 1) / s + 1).min(wo)
                } else {
                    0
                };
                for oy in 0..ho {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for ox in ox_lo..ox_hi {
                        drow[ox * s + kx - p] += srow[ox];
                    }
                }
            }
        }
    }
}

/// 2-D convolution, weight layout `[out, in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// When false, `backward` returns an empty tensor (first layer of a net).
    pub input_grad: bool,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        let fan_out = cout * kernel * kernel;
        Conv2d {
            weight: Param::glorot(&[cout, cin, kernel, kernel], fan_in, fan_out, rng),
            bias: Param::zeros(&[cout]),
            kernel,
            stride,
            pad,
            input_grad: true,
            cache: None,
        }
    }

    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

impl Parameterized for Conv2d {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        x.expect_nchw(Some(self.in_channels()), None, None, "conv2d input")?;
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let co = self.out_channels();
        let ho = conv_out(h, k, s, p);
        let wo = conv_out(w, k, s, p);
        let plane = ho * wo;
        let ckk = c * k * k;
        let mut y = Tensor::zeros(&[n, co, ho, wo]);
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; ckk * plane]
        };
        let wdata = self.weight.value.data();
        let bias = self.bias.value.data();
        for i in 0..n {
            let col: &[f64] = if self.is_pointwise() {
                x.item(i)
            } else {
                im2col(x.item(i), c, h, w, k, s, p, &mut cols);
                &cols
            };
            let yi = y.item_mut(i);
            for (o, b) in bias.iter().enumerate() {
                yi[o * plane..(o + 1) * plane].fill(*b);
            }
            matmul(co, ckk, plane, wdata, false, col, false, yi, 1.0);
        }
        self.cache = mode.is_train().then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.cache.as_ref().expect("conv2d backward without train forward");
        let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let co = self.out_channels();
        let plane = grad.shape()[2] * grad.shape()[3];
        let ckk = c * k * k;
        let pointwise = self.is_pointwise();
        let mut cols = if pointwise { Vec::new() } else { vec![0.0; ckk * plane] };
        let mut dcols = vec![0.0; ckk * plane];
        let mut dx = if self.input_grad {
            Tensor::zeros(x.shape())
        } else {
            Tensor::zeros(&[0])
        };
        {
            let db = self.bias.grad.data_mut();
            for i in 0..n {
                let gi = grad.item(i);
                for (o, d) in db.iter_mut().enumerate() {
                    *d += gi[o * plane..(o + 1) * plane].iter().sum::<f64>();
                }
            }
        }
        for i in 0..n {
            let gi = grad.item(i);
            let col: &[f64] = if pointwise {
                x.item(i)
            } else {
                im2col(x.item(i), c, h, w, k, s, p, &mut cols);
                &cols
            };
            // dW += dy · colᵀ
            matmul(co, plane, ckk, gi, false, col, true, self.weight.grad.data_mut(), 1.0);
            if self.input_grad {
                if pointwise {
                    matmul(
                        ckk,
                        co,
                        plane,
                        self.weight.value.data(),
                        true,
                        gi,
                        false,
                        dx.item_mut(i),
                        0.0,
                    );
                } else {
                    matmul(
                        ckk,
                        co,
                        plane,
                        self.weight.value.data(),
                        true,
                        gi,
                        false,
                        &mut dcols,
                        0.0,
                    );
                    col2im(&dcols, c, h, w, k, s, p, dx.item_mut(i));
                }
            }
        }
        dx
    }
}

/// Transposed convolution, weight layout `[in, out, k, k]`.
/// Output extent is `(size - 1) * stride - 2 * pad + k`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        let fan_out = cout * kernel * kernel;
        ConvTranspose2d {
            weight: Param::glorot(&[cin, cout, kernel, kernel], fan_in, fan_out, rng),
            bias: Param::zeros(&[cout]),
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size - 1) * self.stride + self.kernel - 2 * self.pad
    }
}

impl Parameterized for ConvTranspose2d {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let ci = self.weight.value.shape()[0];
        let co = self.weight.value.shape()[1];
        x.expect_nchw(Some(ci), None, None, "conv-transpose input")?;
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let ckk = co * k * k;
        let mut y = Tensor::zeros(&[n, co, ho, wo]);
        let mut cols = vec![0.0; ckk * h * w];
        for i in 0..n {
            matmul(
                ckk,
                ci,
                h * w,
                self.weight.value.data(),
                true,
                x.item(i),
                false,
                &mut cols,
                0.0,
            );
            let yi = y.item_mut(i);
            col2im(&cols, co, ho, wo, k, s, p, yi);
            for (o, b) in self.bias.value.data().iter().enumerate() {
                yi[o * ho * wo..(o + 1) * ho * wo].iter_mut().for_each(|v| *v += b);
            }
        }
        self.cache = mode.is_train().then(|| x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self
            .cache
            .as_ref()
            .expect("conv-transpose backward without train forward");
        let ci = self.weight.value.shape()[0];
        let co = self.weight.value.shape()[1];
        let (n, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (ho, wo) = (grad.shape()[2], grad.shape()[3]);
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let ckk = co * k * k;
        let mut dcols = vec![0.0; ckk * h * w];
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            let gi = grad.item(i);
            {
                let db = self.bias.grad.data_mut();
                for (o, d) in db.iter_mut().enumerate() {
                    *d += gi[o * ho * wo..(o + 1) * ho * wo].iter().sum::<f64>();
                }
            }
            im2col(gi, co, ho, wo, k, s, p, &mut dcols);
            // dW[ci, co*k*k] += x · dcolsᵀ
            matmul(
                ci,
                h * w,
                ckk,
                x.item(i),
                false,
                &dcols,
                true,
                self.weight.grad.data_mut(),
                1.0,
            );
            matmul(
                ci,
                ckk,
                h * w,
                self.weight.value.data(),
                false,
                &dcols,
                false,
                dx.item_mut(i),
                0.0,
            );
        }
        dx
    }
}
