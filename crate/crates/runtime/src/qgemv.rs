use qigen_core::kernelgen::{kernel_name, SEGMENT_ROWS};
use qigen_core::pack::{BlockDesc, PackedMatrix};
use qigen_core::quant::GroupSize;

use crate::error::{Error, Result};
use crate::kernel::{lookup, Backend, KernelArgs, KernelEntry, KernelFn};
use crate::sums::InputSums;

/// A packed matrix bound to its kernel, with zero-points expanded to reals.
#[derive(Debug)]
pub struct Prepared<'a> {
    pm: &'a PackedMatrix,
    kernel: &'static KernelEntry,
    func: KernelFn,
    backend: Backend,
    zeros: Vec<f32>,
}

impl<'a> Prepared<'a> {
    /// Fails if the matrix's tile has no compiled kernel or its group size
    /// is not a multiple of the kernels' row segment.
    pub fn new(pm: &'a PackedMatrix, backend: Backend) -> Result<Self> {
        let config = pm.config();
        let plan = pm.plan();
        let grouped = match config.group_size {
            GroupSize::FullColumn => false,
            GroupSize::Rows(g) if g % SEGMENT_ROWS == 0 => true,
            GroupSize::Rows(g) => return Err(Error::GroupSize(g)),
        };
        let bits = config.bits.get();
        let kernel = lookup(bits, grouped, plan.m_u, plan.t_u)
            .ok_or_else(|| Error::NoKernel(kernel_name(bits, grouped, plan.m_u, plan.t_u)))?;
        let backend = if backend == Backend::Avx2 && Backend::detect() == Backend::Avx2 && kernel.avx2.is_some() {
            Backend::Avx2
        } else {
            Backend::Portable
        };
        Ok(Self {
            pm,
            kernel,
            func: kernel.function(backend),
            backend,
            zeros: pm.zero_values(),
        })
    }

    pub fn kernel_name(&self) -> &'static str {
        self.kernel.name
    }

    /// Vector layer actually used.
    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// Writes `x W` into `y`. Threads take contiguous ranges of column
    /// blocks; every column is accumulated in the same order whatever the
    /// thread count.
    pub fn run(&self, x: &[f32], sums: &InputSums, threads: usize, y: &mut [f32]) -> Result<()> {
        let pm = self.pm;
        let (n, m) = (pm.rows(), pm.cols());
        if x.len() != n {
            return Err(Error::Dimension { expected: n, actual: x.len() });
        }
        if y.len() != m {
            return Err(Error::Dimension { expected: m, actual: y.len() });
        }
        if threads == 0 {
            return Err(Error::Threads);
        }
        sums.check(pm.groups_per_column())?;
        if m == 0 {
            return Ok(());
        }
        let sums = sums.kernel_buffer();
        let block_cols = pm.block_shape().1.max(1);
        let col_blocks = m.div_ceil(block_cols);
        let threads = threads.min(col_blocks);

        let mut parts: Vec<(usize, usize, &mut [f32])> = Vec::with_capacity(threads);
        let mut rest = y;
        let mut begin = 0;
        for t in 0..threads {
            let end = ((t + 1) * col_blocks / threads * block_cols).min(m);
            let (head, tail) = rest.split_at_mut(end - begin);
            parts.push((begin, end, head));
            rest = tail;
            begin = end;
        }

        let run_part = |(col_begin, col_end, out): (usize, usize, &mut [f32])| {
            let blocks: Vec<BlockDesc> = pm
                .blocks()
                .iter()
                .filter(|b| b.col0 >= col_begin && b.col0 < col_end)
                .copied()
                .collect();
            let args = KernelArgs {
                words: pm.words().as_ptr(),
                scales: pm.scales().as_ptr(),
                zeros: self.zeros.as_ptr(),
                x: x.as_ptr(),
                sums: sums.as_ptr(),
                y: out.as_mut_ptr(),
                n,
                m,
                group_size: pm.group_rows(),
                col_begin,
                col_end,
                blocks: &blocks,
            };
            // SAFETY: the packed matrix validated that its blocks tile the
            // word array, scales and zeros hold groups x m entries, x has n
            // entries, sums one per group plus the total, and `out` covers
            // exactly the columns of `blocks`.
            unsafe { (self.func)(&args) }
        };

        if parts.len() == 1 {
            run_part(parts.pop().expect("one part"));
        } else {
            std::thread::scope(|s| {
                for part in parts {
                    s.spawn(move || run_part(part));
                }
            });
        }
        Ok(())
    }
}

/// Optimized product on the widest available vector layer.
pub fn qgemv(pm: &PackedMatrix, x: &[f32], sums: &InputSums, threads: usize) -> Result<Vec<f32>> {
    qgemv_with(pm, x, sums, threads, Backend::detect())
}

pub fn qgemv_with(
    pm: &PackedMatrix,
    x: &[f32],
    sums: &InputSums,
    threads: usize,
    backend: Backend,
) -> Result<Vec<f32>> {
    let prepared = Prepared::new(pm, backend)?;
    let mut y = vec![0f32; pm.cols()];
    prepared.run(x, sums, threads, &mut y)?;
    Ok(y)
}
