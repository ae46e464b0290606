//! Differentiable primitives. Each forward function has a matching
//! `*_backward` that maps an output gradient to input (and parameter)
//! gradients; layers call them in reverse order.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod shape;

pub use activation::{relu6, relu6_backward, sigmoid, sigmoid_backward, softmax2};
pub use conv::{conv2d, conv2d_backward, conv2d_naive, depthwise_conv2d, depthwise_conv2d_backward, output_extent, ConvGeometry};
pub use linear::{linear, linear_backward};
pub use norm::{batch_norm, batch_norm_backward, batch_norm_infer, update_running_stats, BnCache, BnMode, BN_EPSILON, BN_MOMENTUM};
pub use pool::{avg_pool2d, avg_pool2d_backward, global_avg_pool, global_avg_pool_backward};
pub use shape::{add_residual, flatten};
