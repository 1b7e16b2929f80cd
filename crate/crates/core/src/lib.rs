#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hnn;
pub mod integrators;
pub mod spsgan;
pub mod symmetry;
pub mod systems;

pub use error::{Error, Result};
