//! Dependency-distance attention encoder with relation-extraction and
//! argument-role-labeling heads.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix it
//! to `f64`, which training and the command-line tool use throughout.

pub mod corpus;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod numerics;
mod scalar;
pub mod syntax;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Array64 = numerics::Array<f64>;
pub type Tape64<'a> = numerics::Tape<'a, f64>;
pub type Model64 = encoder::Model<f64>;
pub type ParamStore64 = encoder::ParamStore<f64>;
pub type PreparedSentence64 = encoder::PreparedSentence<f64>;
