//! Dense f64 arrays and a reverse-mode autodiff tape.
//!
//! Everything downstream (embeddings, attention, objectives) is built
//! from the op vocabulary in [`Tape`]; gradients for new compositions
//! come for free and are validated with [`grad_check`].

mod array;
mod check;
mod tape;

pub use array::NdArray;
pub(crate) use array::{matmul_into, matmul_tn_into};
pub use check::grad_check;
pub use tape::{Tape, Var, ATTENTION_MASK_FILL, L2_NORM_EPS, LAYER_NORM_EPS};

/// Errors raised by array construction and tape ops.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("ln of non-positive value {value}")]
    LnDomain { value: f64 },
    #[error("contract violation in {op}: {details}")]
    Contract { op: &'static str, details: String },
    #[error("gradient requested before backward")]
    GradNotComputed,
    #[error("non-finite result in {op}")]
    NonFinite { op: &'static str },
}
