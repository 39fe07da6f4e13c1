//! Small reverse-mode network core: tensors, dense/GRU layers, softmax and
//! cross-entropy, Adam, finite-difference checking and checkpoints.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, grad_check_store, FD_STEP};
pub use layers::{cross_entropy, Activation, Dense, GruCell, Mlp};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{softmax_slice, NodeId, Tape, TapeGrads};
pub use tensor::Tensor;

/// Softmax of a plain slice, with max subtraction.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    softmax_slice(v)
}
