//! Temporal knowledge graph forecasting with persistent entity state.

pub mod cli;
pub(crate) mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod memory;
pub mod model;

pub use error::{EstError, Result};
pub mod eval;
pub mod train;
