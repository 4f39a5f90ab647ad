pub mod cli;
pub mod error;
pub mod evalstat;
pub mod filter;
pub mod gac;
pub mod losses;
pub mod netzoo;
pub mod phantom;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
