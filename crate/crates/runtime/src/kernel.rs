//! Calling convention and registry of the kernels generated at build time.

use qigen_core::kernelgen::kernel_name;
use qigen_core::pack::BlockDesc;

/// Arguments shared by every generated kernel.
///
/// `sums` holds the input total followed by the per-group input sums. `y`
/// points at the output of column `col_begin` and covers `col_end - col_begin`
/// columns; `blocks` are the stored blocks of those columns in storage order.
#[derive(Debug)]
pub struct KernelArgs<'a> {
    pub words: *const u32,
    pub scales: *const f32,
    pub zeros: *const f32,
    pub x: *const f32,
    pub sums: *const f32,
    pub y: *mut f32,
    pub n: usize,
    pub m: usize,
    pub group_size: usize,
    pub col_begin: usize,
    pub col_end: usize,
    pub blocks: &'a [BlockDesc],
}

pub type KernelFn = unsafe fn(&KernelArgs);

/// One compiled kernel, instantiated for each vector layer.
#[derive(Debug)]
pub struct KernelEntry {
    pub name: &'static str,
    pub bits: u32,
    pub grouped: bool,
    pub m_u: usize,
    pub t_u: usize,
    pub portable: KernelFn,
    pub avx2: Option<KernelFn>,
}

#[cfg(target_arch = "x86_64")]
macro_rules! avx2_entry {
    ($f:ident) => {
        Some($f)
    };
}

#[cfg(not(target_arch = "x86_64"))]
macro_rules! avx2_entry {
    ($f:ident) => {
        None
    };
}

#[allow(clippy::all)]
mod generated {
    use super::{KernelArgs, KernelEntry};
    include!(concat!(env!("OUT_DIR"), "/registry.rs"));
}

pub use generated::KERNELS;

/// Descriptor lines of the compiled kernels.
pub const MANIFEST: &str = include_str!(concat!(env!("OUT_DIR"), "/kernels/manifest.txt"));

pub fn lookup(bits: u32, grouped: bool, m_u: usize, t_u: usize) -> Option<&'static KernelEntry> {
    let name = kernel_name(bits, grouped, m_u, t_u);
    KERNELS.iter().find(|k| k.name == name)
}

/// Which vector layer runs the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Portable,
    Avx2,
}

impl Backend {
    /// Widest layer this CPU supports.
    pub fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
            return Backend::Avx2;
        }
        Backend::Portable
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Portable => "portable",
            Backend::Avx2 => "avx2",
        }
    }
}

impl KernelEntry {
    /// Kernel for `backend`, or the portable one if that layer is unavailable.
    pub fn function(&self, backend: Backend) -> KernelFn {
        match backend {
            Backend::Avx2 if Backend::detect() == Backend::Avx2 => self.avx2.unwrap_or(self.portable),
            _ => self.portable,
        }
    }
}
