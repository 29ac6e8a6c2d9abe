//! Small dense-tensor toolkit: 2-D `f64` tensors, an eager tape for
//! reverse-mode differentiation, the layers used by the auction networks, and
//! an Adam-driven parameter store with text checkpoints.

mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use error::{NeuralError, Result};
pub use gradcheck::{check_gradients, GradCheck};
pub use graph::{Axis, Gradients, Graph, Var};
pub use layers::{sinusoidal_encoding, Activation, BiLstm, GruCell, Linear, Lstm, Mlp, MultiHeadAttention, Positional};
pub use params::{AdamConfig, ParamId, ParamStore, CHECKPOINT_MAGIC};
pub use tensor::Tensor;
