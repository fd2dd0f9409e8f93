//! Dense tensors, reverse-mode gradients, real FFTs, parameter
//! initialization and the Adam optimizer.

mod adam;
pub mod fft;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Activation, CustomOp, Graph, Gradients, Var};
pub(crate) use graph::matmul_rows;
pub use params::{init_params, Init, ParamSet, ParamSpec};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: alloc::string::String },
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(alloc::string::String),
}

pub(crate) fn shape_err(op: &'static str, detail: alloc::string::String) -> NumError {
    NumError::Shape { op, detail }
}
