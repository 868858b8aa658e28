//! Tensor kernels with explicit backward passes.
//!
//! Every function here is pure: outputs are freshly allocated and inputs are
//! only read. The [`crate::graph`] module records these kernels on a tape to
//! obtain reverse-mode gradients of composed networks.

mod conv;
mod elementwise;
mod linear;
mod loss;
mod pool;
mod shape;

pub use conv::{conv2d, conv2d_backward, Conv2dGrads, ConvGeometry};
pub use elementwise::{
    broadcast_mul, broadcast_mul_backward, broadcast_shape, relu, relu_backward, tanh, tanh_backward,
};
pub use linear::{linear, linear_backward, LinearGrads};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_backward, CrossEntropy};
pub use pool::{
    channel_mean, channel_mean_backward, global_avg_pool, global_avg_pool_backward, group_max, max_pool,
    max_pool_backward, MaxPoolOutput,
};
pub use shape::{concat_channels, slice_channels};

#[allow(unused_imports)]
pub(crate) use conv::sum_in_order;
