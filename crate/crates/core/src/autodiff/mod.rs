//! Reverse-mode automatic differentiation on a re-entrant tape.

mod ops;
mod tape;

pub use ops::{log1p_exp, sigmoid, softplus, Op};
pub use tape::{Tape, Var};
