//! Patch-based classification of stimulated Raman histology slides.

pub mod embed;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod nn;
pub mod objectives;
pub mod registry;
pub mod segment;
pub mod trainer;
pub mod preprocess;

pub use error::{Result, SrhError};
