use qigen_core::pack::PackedMatrix;

/// Storage of a quantized matrix against dense 32-bit weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryReport {
    pub weight_bits: u64,
    pub scale_bits: u64,
    pub zero_bits: u64,
    pub total_bits: u64,
    pub dense_bits: u64,
    /// `dense_bits / total_bits`
    pub ratio: f64,
}

/// `b n m` weight bits, 32 bits per scale and `zero_bits` per zero-point for
/// `groups` groups per column.
pub fn memory_formula(n: u64, m: u64, bits: u32, groups: u64, zero_bits: u32) -> MemoryReport {
    let weight_bits = bits as u64 * n * m;
    let scale_bits = 32 * groups * m;
    let zero_bits = zero_bits as u64 * groups * m;
    let total_bits = weight_bits + scale_bits + zero_bits;
    let dense_bits = 32 * n * m;
    MemoryReport {
        weight_bits,
        scale_bits,
        zero_bits,
        total_bits,
        dense_bits,
        ratio: dense_bits as f64 / total_bits as f64,
    }
}

pub fn memory_report(pm: &PackedMatrix) -> MemoryReport {
    let config = pm.config();
    let report = memory_formula(
        pm.rows() as u64,
        pm.cols() as u64,
        config.bits.get(),
        pm.groups_per_column() as u64,
        config.zero_mode.zero_bits(config.bits),
    );
    debug_assert_eq!(report.total_bits, pm.payload_bits());
    report
}
