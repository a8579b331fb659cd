//! Teacher-student self-distillation pretraining for a small Vision
//! Transformer, frozen-feature linear probing, and ROC-AUC/accuracy
//! evaluation, on a self-contained `f64` autodiff engine.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod tensor;
pub mod vit;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
pub mod augment;
pub mod distill;
pub mod optim;
pub mod par;
pub mod data_io;
pub mod artifacts;
pub mod config;
pub mod metrics;
pub mod probe;
pub mod suite;
