//! Sparse-pilot MIMO-OFDM channel estimation workbench.

pub mod baselines;
pub mod channel;
pub mod config;
pub mod error;
pub mod estimators;
pub mod grid;
pub mod linalg;
pub mod nn;
pub mod objective;
pub mod pilots;
pub mod pipeline;
pub mod rate;
pub mod rng;

pub use error::{Error, Result};
pub use grid::{ComplexGrid, GridShape};
