pub mod checks;
pub mod error;
pub mod glyphs;
pub mod harness;
pub mod models;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
