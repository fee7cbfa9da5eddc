//! Tensors, the network layers, reverse-mode differentiation and Adam.

pub mod gradcheck;
pub(crate) mod kernels;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_at, relative_error};
pub use layers::{
    conv2d_forward, conv3d_forward, cross_entropy_loss, dense_forward, dropout_apply, relu, softmax, ConvKernel2D,
    ConvKernel3D, DenseLayer, Mode,
};
pub use optim::{Adam, AdamConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
