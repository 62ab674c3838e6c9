//! Gaussian extreme value (Smith) max-stable processes: simulation, pairwise
//! composite likelihood fitting with sandwich uncertainty, model selection and
//! return-level prediction.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod cli;
pub mod data;
pub mod design;
pub mod error;
pub mod gev;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod normal;
pub mod optim;
pub mod score;
pub mod simulate;
pub mod smith;
pub mod stats;
pub mod study;

pub use error::{Error, Result};
