pub mod augment;
pub mod cli;
pub mod config;
pub mod backends;
pub mod data;
pub mod dumenet;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod nn;
pub mod signal;
pub mod system;
pub mod train;

pub use error::{Error, Result};
