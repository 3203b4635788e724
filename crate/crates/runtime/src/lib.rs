//! Quantized matrix-vector products `y = x W` over packed weights: a scalar
//! reference and the generated tiled kernels, with column-partitioned threads.

pub mod error;
pub mod kernel;
mod memory;
mod qgemv;
mod reference;
pub mod simd;
mod sums;

pub use error::{Error, Result};
pub use kernel::Backend;
pub use memory::{memory_formula, memory_report, MemoryReport};
pub use qgemv::{qgemv, qgemv_with, Prepared};
pub use reference::qgemv_reference;
pub use sums::{input_sums, InputSums};
