//! Desk-scale testbed for lp adversarial attacks against a grid of victim
//! classifiers and for model-parsing networks that infer victim attributes
//! from attack instances.

pub mod attack;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod parser;
pub mod pipeline;
pub mod redset;
pub mod victim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
