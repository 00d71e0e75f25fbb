//! CPU kernels with analytic gradients.

mod activation;
mod conv;
pub(crate) mod gemm;
mod loss;
mod norm;
mod reduce;

pub use activation::{
    dense, dense_backward, dropout, dropout_backward, global_avg_pool, global_avg_pool_backward,
    relu, relu_backward, relu_backward_in_place, relu_in_place,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
pub use loss::softmax_cross_entropy;
pub use norm::{
    batch_stats, bn_backward, bn_forward_eval, bn_forward_train, update_running, BatchNorm,
    BatchStats, BnCache, Mode, BN_EPS, BN_MOMENTUM,
};
