pub mod error;
pub mod kernelgen;
pub mod pack;
pub mod perfmodel;
pub mod quant;

pub use error::{Error, Result};
