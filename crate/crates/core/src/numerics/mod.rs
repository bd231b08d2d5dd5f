//! Differentiable tensor operators for the autoencoder.
//!
//! Operators are plain functions over [`Tensor`]; [`Graph`] records a forward
//! computation and replays it in reverse to produce parameter gradients.

mod graph;
mod ops;
mod optim;
mod params;
mod real;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{
    add, conv2d, conv2d_backward, conv_output_size, dense, dense_backward, mse, mse_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, transpose_conv2d, transpose_conv2d_backward,
    transpose_conv_output_size, ConvGrads,
};
pub use optim::{OptimizerKind, OptimizerSpec, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{LayoutId, ModelWeights, ParamLayout, ParamSpec};
pub use real::Real;
pub use tensor::Tensor;
