//! Numerical engine for extending C^p Whitney fields from stratified closed sets.

pub mod cli;
pub mod cutoff;
pub mod error;
pub mod expr;
pub mod extension;
pub mod field;
pub mod geometry;
pub mod jet;
pub mod scene;
pub mod verify;

pub use error::{Error, Result};
