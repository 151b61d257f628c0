//! Dense layers, GRU cells, reverse-mode differentiation and Adam.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport, ScalarProgram};
pub use graph::{Eval, Gradients, Graph, Tape, Value, Var};
pub use layers::{dense_forward, gru_cell, Activation, DenseLayer, GruLayer, ParamBuilder};
pub use params::{param_init, Init, ParamId, ParamStore, Tensor};
