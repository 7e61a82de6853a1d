pub mod belief;
pub mod cli;
pub mod engine;
pub mod error;
pub mod grid;
pub mod threshold;
pub mod verify;

pub use error::{Error, Result};
