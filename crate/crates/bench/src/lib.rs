//! Shared fixtures for the criterion benches.

use deskbc::augment::Batch;
use deskbc::nn::Tensor;
use deskbc::seed;
use rand::Rng as _;

pub fn random_values(n: usize, lo: f64, hi: f64, s: u64) -> Vec<f64> {
    let mut rng = seed::rng(s);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, s: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, random_values(n, lo, hi, s)).expect("shape matches length")
}

/// Normalized camera-sized images with steering targets and binary masks.
pub fn random_batch(b: usize, s: u64) -> Batch {
    let masks = random_tensor(&[b, 1, 224, 224], 0.0, 1.0, s + 1).map(|v| (v > 0.8) as u8 as f64);
    Batch {
        images: random_tensor(&[b, 3, 224, 224], -0.5, 0.5, s),
        steering: random_values(b, -0.4, 0.4, s + 2),
        masks: Some(masks),
        indices: (0..b).collect(),
    }
}
