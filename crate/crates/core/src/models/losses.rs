//! Scalar losses returning `(value, d value / d prediction)`.

use crate::error::{Error, Result};
use crate::nn::Tensor;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::shape(format!("{what}: empty tensors")));
    }
    Ok(())
}

/// Mean of squared differences over every element.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(pred, target, "mse")?;
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d * d;
        *g = 2.0 * d / n;
    }
    Ok((sum / n, grad))
}

/// Reconstruction loss: mean over pixels of `(x - x_hat)^2`.
pub fn ae_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    Ok(mse(x_hat, x)?.0)
}

/// Binary cross-entropy averaged over elements; predictions are clamped away
/// from 0 and 1.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(pred, target, "bce")?;
    const EPS: f64 = 1e-7;
    let n = pred.len() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let pc = p.clamp(EPS, 1.0 - EPS);
        sum -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        *g = if p == pc { (pc - t) / (pc * (1.0 - pc)) / n } else { 0.0 };
    }
    Ok((sum / n, grad))
}

/// Sum of absolute differences per image, averaged over the batch.
pub fn sit_recon_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    Ok(l1_per_image(x_hat, x)?.0)
}

pub fn l1_per_image(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(pred, target, "l1")?;
    let n = pred.batch() as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

/// Steering MSE for a `[B, 1]` prediction.
pub fn steering_mse(pred: &Tensor, target: &[f64]) -> Result<(f64, Tensor)> {
    let t = Tensor::from_vec(pred.shape(), target.to_vec())?;
    mse(pred, &t)
}

/// `mse(upsample(pred, k), target)` without materializing the up-sampled
/// tensor. Per `k x k` block, `sum (p - t_i)^2 = k^2 (p - mean t)^2 + sum (t_i - mean t)^2`,
/// so the gradient w.r.t. the small prediction only needs block means.
pub fn mse_upsampled(pred: &Tensor, target: &Tensor, k: usize) -> Result<(f64, Tensor)> {
    if k == 1 {
        return mse(pred, target);
    }
    let (means, spread) = block_stats(target, k, pred)?;
    let n = target.len() as f64;
    let kk = (k * k) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = spread;
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(&means) {
        let d = p - t;
        sum += kk * d * d;
        *g = 2.0 * kk * d / n;
    }
    Ok((sum / n, grad))
}

/// `bce(upsample(pred, k), target)`; cross-entropy is linear in the target,
/// so each block contributes `k^2 * bce(p, mean t)`.
pub fn bce_upsampled(pred: &Tensor, target: &Tensor, k: usize) -> Result<(f64, Tensor)> {
    if k == 1 {
        return bce(pred, target);
    }
    let (means, _) = block_stats(target, k, pred)?;
    const EPS: f64 = 1e-7;
    let n = target.len() as f64;
    let kk = (k * k) as f64;
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(&means) {
        let pc = p.clamp(EPS, 1.0 - EPS);
        sum -= kk * (t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
        *g = if p == pc {
            kk * (pc - t) / (pc * (1.0 - pc)) / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

/// Block means of `target` over `k x k` tiles and the total within-block
/// squared spread. `pred` supplies the expected small shape.
fn block_stats(target: &Tensor, k: usize, pred: &Tensor) -> Result<(Vec<f64>, f64)> {
    pred.expect_nchw(None, None, None, "prediction")?;
    let s = pred.shape();
    target.expect_shape(&[s[0], s[1], s[2] * k, s[3] * k], "up-sampled target")?;
    let (h, w) = (s[2], s[3]);
    let (th, tw) = (h * k, w * k);
    let inv = 1.0 / (k * k) as f64;
    let mut means = vec![0.0; pred.len()];
    let td = target.data();
    for p in 0..s[0] * s[1] {
        for y in 0..th {
            let row = &td[(p * th + y) * tw..(p * th + y + 1) * tw];
            let dst = &mut means[(p * h + y / k) * w..(p * h + y / k + 1) * w];
            for (x, v) in row.iter().enumerate() {
                dst[x / k] += v;
            }
        }
    }
    means.iter_mut().for_each(|m| *m *= inv);
    let mut spread = 0.0;
    for p in 0..s[0] * s[1] {
        for y in 0..th {
            let row = &td[(p * th + y) * tw..(p * th + y + 1) * tw];
            let mrow = &means[(p * h + y / k) * w..(p * h + y / k + 1) * w];
            for (x, v) in row.iter().enumerate() {
                let d = v - mrow[x / k];
                spread += d * d;
            }
        }
    }
    Ok((means, spread))
}
