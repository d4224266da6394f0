//! Minimal reverse-mode neural network toolkit in `f64`.
//!
//! Layers cache activations during a [`Mode::Train`] forward pass and
//! accumulate parameter gradients in `backward`. Tensors are dense row-major
//! with NCHW layout for images.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod layer;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod param;
pub mod pool;
pub mod sequential;
pub mod tensor;

pub use activation::{ActKind, Activation};
pub use attention::MultiHeadAttention;
pub use conv::{Conv2d, ConvTranspose2d};
pub use dropout::Dropout;
pub use layer::{Layer, Mode};
pub use linear::Linear;
pub use norm::{BatchNorm2d, LayerNorm};
pub use optim::Adam;
pub use param::{Param, ParamVisitor, Parameterized};
pub use pool::{AvgPool, MaxPool2, Upsample};
pub use sequential::{Module, Sequential};
pub use tensor::Tensor;
