use super::param::Parameterized;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

/// A differentiable operator. `forward` in [`Mode::Train`] caches what the
/// following `backward` needs; `backward` accumulates parameter gradients and
/// returns the gradient w.r.t. the layer input.
pub trait Layer: Parameterized {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;
    fn backward(&mut self, grad: &Tensor) -> Tensor;
}

/// Implements a no-op [`Parameterized`] for parameter-free layers.
macro_rules! no_params {
    ($($t:ty),*) => {$(
        impl $crate::nn::param::Parameterized for $t {
            fn visit_params(&mut self, _prefix: &str, _f: &mut $crate::nn::param::ParamVisitor<'_>) {}
        }
    )*};
}
pub(crate) use no_params;
