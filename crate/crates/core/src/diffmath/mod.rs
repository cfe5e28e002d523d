//! Reverse-mode differentiation, dense layers, and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod mlp;

pub use adam::AdamState;
pub use gradcheck::grad_check;
pub use graph::{softmax_rows, Gradients, Graph, Matrix, Var};
pub use mlp::{Activation, Dense, Mlp};

/// Bound applied to every log-variance before it is exponentiated.
pub const LOGVAR_CLAMP: f64 = 10.0;
