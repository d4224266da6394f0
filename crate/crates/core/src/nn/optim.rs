use super::param::Parameterized;

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<M: Parameterized + ?Sized>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let moments = &mut self.moments;
        let mut idx = 0;
        model.visit_params("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if moments.len() <= idx {
                moments.push((vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            }
            let (m, v) = &mut moments[idx];
            let g = p.grad.data();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::{Param, ParamVisitor};
    use crate::nn::tensor::Tensor;

    struct Quad(Param);
    impl Parameterized for Quad {
        fn visit_params(&mut self, _prefix: &str, f: &mut ParamVisitor<'_>) {
            f("w", &mut self.0)
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut q = Quad(Param::new(Tensor::from_vec(&[2], vec![3.0, -2.0]).unwrap()));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let w = q.0.value.data().to_vec();
            q.0.grad = Tensor::from_vec(&[2], w.iter().map(|x| 2.0 * x).collect()).unwrap();
            opt.step(&mut q);
        }
        assert!(q.0.value.data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut q = Quad(Param::new(Tensor::from_vec(&[1], vec![1.0]).unwrap()));
        q.0.grad = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let mut opt = Adam::new(0.01);
        opt.step(&mut q);
        assert!((q.0.value.data()[0] - 0.99).abs() < 1e-6);
    }
}
