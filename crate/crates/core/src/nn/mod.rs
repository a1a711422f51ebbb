//! Tensor, layer, and optimizer engine for the hybrid model.
//!
//! Layers record what they need during [`Layer::forward`] and consume it in
//! [`Layer::backward`]; [`Network`] chains them. All arithmetic is `f64`.

pub mod conv;
pub mod dense;
pub mod elementwise;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod lstm;
pub mod network;
pub mod norm;
pub mod optim;
pub mod pool;
mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, Padding};
pub use dense::{dense_backward, dense_forward};
pub use elementwise::{activation_forward, dropout_forward, softmax_rows, Activation};
pub use layer::{Layer, LayerKind, LayerSpec, Stage};
pub use loss::{cross_entropy_with_labels, one_hot, softmax_cross_entropy};
pub use lstm::{bilstm_forward, BiLstmWeights, LstmWeights};
pub use network::Network;
pub use norm::{batchnorm_forward, RunningStats};
pub use optim::{adam_step, Adam, AdamConfig, AdamState};
pub use pool::maxpool2d_forward;
pub use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}
