pub type Result<T> = std::result::Result<T, Error>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] qigen_core::Error),
    #[error("input has length {actual}, expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("thread count must be at least 1")]
    Threads,
    #[error("input sums cover {actual} groups, the matrix has {expected}")]
    SumsMismatch { expected: usize, actual: usize },
    #[error("no compiled kernel {0}")]
    NoKernel(String),
    #[error("group size {0} is not supported by the kernels (multiple of 8 required)")]
    GroupSize(usize),
}
