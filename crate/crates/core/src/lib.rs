//! Hybrid near/far-field THz ultra-massive-MIMO channel simulation and
//! block-recurrent transformer (BRT) channel estimation.

pub mod brt;
pub mod channel;
pub mod config;
pub mod data;
pub mod estimators;
pub mod eval;
mod error;
pub mod geometry;
pub mod linalg;
pub mod measurement;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
