//! Normalizing flows with exact change-of-variables likelihood, plus tools
//! for analysing why such models can assign higher likelihood to
//! out-of-distribution inputs.

pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod likelihood;
pub mod ood;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
