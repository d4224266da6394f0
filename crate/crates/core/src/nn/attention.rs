use super::layer::{Layer, Mode};
use super::linear::Linear;
use super::param::{join, ParamVisitor, Parameterized};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Multi-head self-attention over `[B, T, D]` token sequences.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub qkv: Linear,
    pub proj: Linear,
    cache: Option<AttnCache>,
}

#[derive(Clone, Debug)]
struct AttnCache {
    b: usize,
    t: usize,
    qkv: Tensor,
    // softmax weights, [B, H, T, T]
    attn: Vec<f64>,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut Rng) -> Self {
        assert!(
            heads > 0 && dim.is_multiple_of(heads),
            "dim {dim} not divisible by {heads} heads"
        );
        MultiHeadAttention {
            heads,
            qkv: Linear::new(dim, 3 * dim, rng),
            proj: Linear::new(dim, dim, rng),
            cache: None,
        }
    }

    fn dim(&self) -> usize {
        self.proj.fan_in()
    }
}

impl Parameterized for MultiHeadAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>) {
        self.qkv.visit_params(&join(prefix, "qkv"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
}

impl Layer for MultiHeadAttention {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let d = self.dim();
        if x.rank() != 3 || x.shape()[2] != d {
            return Err(Error::shape(format!(
                "attention expects [B, T, {d}], got {:?}",
                x.shape()
            )));
        }
        let (b, t) = (x.shape()[0], x.shape()[1]);
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.qkv.forward(x, mode)?;
        let qd = qkv.data();
        let row = 3 * d;
        let mut attn = vec![0.0; b * h * t * t];
        let mut out = Tensor::zeros(&[b, t, d]);
        for bi in 0..b {
            let base = bi * t * row;
            for hi in 0..h {
                let a = &mut attn[(bi * h + hi) * t * t..(bi * h + hi + 1) * t * t];
                let q = &qd[base + hi * dh..];
                let k = &qd[base + d + hi * dh..];
                // S = Q K^T
                gemm(t, dh, t, scale, q, row, 1, k, 1, row, 0.0, a, t, 1);
                for r in a.chunks_mut(t) {
                    let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in r.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    r.iter_mut().for_each(|v| *v /= s);
                }
                let v = &qd[base + 2 * d + hi * dh..];
                let o = &mut out.data_mut()[bi * t * d + hi * dh..];
                gemm(t, t, dh, 1.0, a, t, 1, v, row, 1, 0.0, o, d, 1);
            }
        }
        let y = self.proj.forward(&out, mode)?;
        self.cache = mode.is_train().then_some(AttnCache { b, t, qkv, attn });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let d_out = self.proj.backward(grad);
        let cache = self.cache.as_ref().expect("attention backward without train forward");
        let (b, t) = (cache.b, cache.t);
        let d = self.dim();
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let row = 3 * d;
        let qd = cache.qkv.data();
        let go = d_out.data();
        let mut dqkv = Tensor::zeros(&[b, t, row]);
        let mut da = vec![0.0; t * t];
        for bi in 0..b {
            let base = bi * t * row;
            for hi in 0..h {
                let a = &cache.attn[(bi * h + hi) * t * t..(bi * h + hi + 1) * t * t];
                let go_h = &go[bi * t * d + hi * dh..];
                let v = &qd[base + 2 * d + hi * dh..];
                // dV = A^T dO
                let dv = &mut dqkv.data_mut()[base + 2 * d + hi * dh..];
                gemm(t, t, dh, 1.0, a, 1, t, go_h, d, 1, 0.0, dv, row, 1);
                // dA = dO V^T
                gemm(t, dh, t, 1.0, go_h, d, 1, v, 1, row, 0.0, &mut da, t, 1);
                for (ar, dr) in a.chunks(t).zip(da.chunks_mut(t)) {
                    let dot: f64 = ar.iter().zip(dr.iter()).map(|(x, y)| x * y).sum();
                    for (dv, av) in dr.iter_mut().zip(ar) {
                        *dv = av * (*dv - dot);
                    }
                }
                let q = &qd[base + hi * dh..];
                let k = &qd[base + d + hi * dh..];
                // dQ = dS K * scale
                let dq = &mut dqkv.data_mut()[base + hi * dh..];
                gemm(t, t, dh, scale, &da, t, 1, k, row, 1, 0.0, dq, row, 1);
                // dK = dS^T Q * scale
                let dk = &mut dqkv.data_mut()[base + d + hi * dh..];
                gemm(t, t, dh, scale, &da, 1, t, q, row, 1, 0.0, dk, row, 1);
            }
        }
        self.qkv.backward(&dqkv)
    }
}
