//! Dense `f64` tensors, reverse-mode autodiff, Adam, dense layers and an LSTM cell.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{NamedTensor, TensorRecord};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{collect_grads, uniform_init, Linear, Mlp, ParamSet};
pub use lstm::{lstm_step, LstmCellParams};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
