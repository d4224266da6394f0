use super::tensor::Tensor;
use rand::Rng as _;

/// A named tensor owned by a layer. Non-trainable params (batch-norm running
/// statistics) are checkpointed but skipped by optimizers.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: Tensor) -> Self {
        Param {
            grad: Tensor::zeros(&[0]),
            value,
            trainable: false,
        }
    }

    /// Glorot-uniform initialization.
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut crate::seed::Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        Param::new(Tensor::from_vec(shape, data).expect("glorot shape"))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(Tensor::zeros(shape))
    }

    pub fn zero_grad(&mut self) {
        if self.trainable {
            self.grad.fill(0.0);
        }
    }
}

pub type ParamVisitor<'a> = dyn FnMut(&str, &mut Param) + 'a;

/// Anything owning parameters. Visit order must be stable: optimizers and
/// checkpoints rely on it.
pub trait Parameterized {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_>);

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
