//! Dense tensors, a reverse-mode tape, Adadelta and parameter checkpoints.

mod adadelta;
pub mod checkpoint;
mod graph;
mod tensor;

pub use adadelta::{Adadelta, AdadeltaConfig, AdadeltaState};
pub use graph::{log_softmax, softmax, Graph, Var};
pub use tensor::{Gradients, ParamId, ParamSet, Tensor};
