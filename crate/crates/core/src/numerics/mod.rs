//! Dense arrays, forward kernels and reverse-mode differentiation.

mod array;
pub mod gradcheck;
pub mod ops;
mod tape;

pub use array::Array;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
