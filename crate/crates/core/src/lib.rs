//! Riccati-based decomposition of LTI systems and decentralized grid viability kernels.

pub mod config;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod matrix;
pub mod pipeline;
pub mod riccati;
pub mod system;

pub use error::{Error, Result};
