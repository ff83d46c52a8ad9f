//! Minimal reverse-mode machinery for the encoders: dense layers, LSTM cells
//! and dictionary attention, each with an explicit pullback, plus parameter
//! storage, SGD and a finite-difference gradient checker.
//!
//! There is no general graph. Callers run the forward functions, keep the
//! returned tapes, and call the pullbacks in reverse order.

mod gradcheck;
mod layers;
mod optim;
mod store;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use layers::{
    attention_combine, dense, lstm_step, sigmoid, softmax, Activation, AttentionGrads,
    AttentionTape, DenseGrads, DenseTape, Dictionary, LstmGrads, LstmState, LstmStepGrads,
    LstmStepTape, LstmWeights,
};
pub use optim::{clip_grad_norm, sgd_step, SgdConfig};
pub use store::{Param, ParamStore, StoreManifest, TensorEntry};
pub use tensor::{mat_vec, outer_acc, vec_mat, vec_mat_acc, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("gradient for {0:?} is unset")]
    StaleGradients(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for KernelError {
    fn from(e: std::io::Error) -> Self {
        KernelError::Io(e.to_string())
    }
}
