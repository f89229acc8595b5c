//! Minimal deterministic neural-network core: tensors, a small layer
//! vocabulary, cross-entropy, SGD/Adam, gradient checking and weight files.

pub mod gemm;
mod gradcheck;
mod io;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;

pub use gradcheck::{gradcheck, gradcheck_with_step, DEFAULT_STEP};
pub use io::{decode_weights, encode_weights, load_weights, save_weights, MAGIC, VERSION};
pub use layer::Layer;
pub use loss::{argmax, cross_entropy, cross_entropy_smoothed, loss_and_grad, softmax, softmax_rows};
pub use network::{ForwardCache, Gradients, Network, Params};
pub use optim::{OptimizerKind, OptimizerState};
pub use tensor::{Scalar, Tensor};
pub use train::{accuracy, predict, predict_logits, train, Augment, EpochStats, TrainConfig, Trained};

