//! Slice-level kernels behind the graph operations.

pub mod conv;
pub mod dense;
pub mod loss;
pub mod pool;

pub use conv::{conv1d_backward, conv1d_forward, Conv1dGeometry};
pub use dense::{dense_backward, dense_forward};
pub use loss::softmax_cross_entropy;
pub use pool::{maxpool1d_backward, maxpool1d_forward};
