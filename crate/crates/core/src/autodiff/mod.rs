//! Dense reverse-mode differentiation.
//!
//! A [`Tape`] records matrix-valued operations during a forward pass;
//! [`Tape::backward`] sweeps it once in reverse. Trainable state lives in a
//! [`ParamStore`] and is bound onto each new tape with [`Tape::param`].

mod gradcheck;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, RELATIVE_FLOOR};
pub use param::{ParamGroup, ParamId, ParamStore, Parameter, Sgd};
pub use tape::{sigmoid, softmax, softmax_rows, Diagnostics, Gradients, Tape, Var, MASK_SENTINEL, PROB_FLOOR};
pub use tensor::{argmax, Tensor};
