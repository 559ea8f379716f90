//! Minimal reverse-mode differentiation for 1-D convolutional networks.
//!
//! Values flow through a [`Tape`]; each recorded op knows its exact
//! adjoint. [`Network`] assembles [`LayerSpec`] stacks on top of the tape,
//! [`AdamState`] updates parameters, and [`check_gradients`] compares the
//! reverse-mode result against central differences.

mod adam;
mod gradcheck;
mod network;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use gradcheck::{check_gradients, Differentiable, GradientReport, MseObjective};
pub use network::{Activation, LayerSpec, Network};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
