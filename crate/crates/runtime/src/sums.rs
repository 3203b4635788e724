use qigen_core::quant::GroupSize;

use crate::error::{Error, Result};

/// Input total and per-group input sums.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSums {
    pub total: f32,
    pub per_group: Vec<f32>,
}

/// Sums are accumulated in `f64` and rounded once.
pub fn input_sums(x: &[f32], group_size: GroupSize) -> Result<InputSums> {
    let n = x.len();
    if let GroupSize::Rows(g) = group_size {
        if g == 0 {
            return Err(qigen_core::Error::ZeroGroupSize.into());
        }
        if n % g != 0 {
            return Err(qigen_core::Error::RaggedGroups { rows: n, group_size: g }.into());
        }
    }
    let g = group_size.rows(n).max(1);
    let per_group: Vec<f64> = x.chunks(g).map(|c| c.iter().map(|&v| v as f64).sum()).collect();
    Ok(InputSums {
        total: per_group.iter().sum::<f64>() as f32,
        per_group: per_group.into_iter().map(|s| s as f32).collect(),
    })
}

impl InputSums {
    /// Layout the kernels read: total, then the per-group sums.
    pub(crate) fn kernel_buffer(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.per_group.len() + 1);
        v.push(self.total);
        v.extend_from_slice(&self.per_group);
        v
    }

    pub(crate) fn check(&self, groups: usize) -> Result<()> {
        if self.per_group.len() != groups {
            return Err(Error::SumsMismatch {
                expected: groups,
                actual: self.per_group.len(),
            });
        }
        Ok(())
    }
}
