use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("unsupported bit width {0} (expected 2, 3 or 4)")]
    UnsupportedBits(u32),
    #[error("group size must be positive")]
    ZeroGroupSize,
    #[error("group size {group_size} does not divide the row count {rows}")]
    RaggedGroups { rows: usize, group_size: usize },
    #[error("cannot quantize an empty group")]
    EmptyGroup,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("shape mismatch: expected {expected} elements, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("code {code} at index {index} does not fit in {bits} bits")]
    CodeOutOfRange { index: usize, code: u32, bits: u32 },
    #[error("zero-point {zero} is not a {bits}-bit integer code")]
    InvalidZero { zero: f32, bits: u32 },
    #[error("negative or non-finite scale {0}")]
    InvalidScale(f32),
    #[error("{len} codes cannot be packed at {bits} bits (need a multiple of {unit})")]
    PackLength { len: usize, bits: u32, unit: usize },
    #[error("{rows} rows cannot be packed at {bits} bits (need a multiple of {unit})")]
    RowAlignment { rows: usize, bits: u32, unit: usize },
    #[error("tile plan {0}")]
    InvalidPlan(String),
    #[error("no register tile satisfies m_u + m_u*t_u + t_u <= {vregs}")]
    NoFeasibleTile { vregs: u32 },
    #[error("minimal block {m_u}x{t_u} costs {cost} bits, more than the {l1_bits}-bit cache")]
    NoFeasibleBlock {
        m_u: usize,
        t_u: usize,
        cost: u64,
        l1_bits: u64,
    },
    #[error("invalid hardware description: {0}")]
    Hardware(String),
    #[error("invalid kernel descriptor: {0}")]
    Descriptor(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?} (not a weight file)")]
    BadMagic([u8; 4]),
    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated weight file: need {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("payload checksum mismatch: header says {expected:#010x}, payload hashes to {actual:#010x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("malformed weight file: {0}")]
    Malformed(String),
}
