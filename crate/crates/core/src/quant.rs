//! Round-to-nearest group quantization.
//!
//! A group of reals `x` is mapped to integer codes in `[0, 2^b)` with a step
//! `s` and a zero-point `z` expressed in code units, so that each weight is
//! reconstructed as `s * (code - z)`. Matrices are quantized column by
//! column; each column is split into contiguous groups of `g` rows that
//! share one `(s, z)` pair.

use crate::error::{Error, Result};

/// Bit width of a quantized code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bits(u32);

impl Bits {
    pub const TWO: Bits = Bits(2);
    pub const THREE: Bits = Bits(3);
    pub const FOUR: Bits = Bits(4);
    pub const ALL: [Bits; 3] = [Bits::TWO, Bits::THREE, Bits::FOUR];

    pub fn new(bits: u32) -> Result<Self> {
        match bits {
            2..=4 => Ok(Bits(bits)),
            other => Err(Error::UnsupportedBits(other)),
        }
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    /// Largest code, `2^b - 1`. Also the extraction mask.
    #[inline]
    pub fn max_code(self) -> u32 {
        (1 << self.0) - 1
    }

    /// Rows covered by one packing unit: one word for 2/4 bits, three words
    /// (32 codes) for 3 bits.
    #[inline]
    pub fn unit_rows(self) -> usize {
        match self.0 {
            3 => 32,
            b => 32 / b as usize,
        }
    }

    /// Words in one packing unit.
    #[inline]
    pub fn unit_words(self) -> usize {
        match self.0 {
            3 => 3,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Bits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupSize {
    /// One `(s, z)` pair per column.
    FullColumn,
    Rows(usize),
}

impl GroupSize {
    /// Rows per group for a column of `n` rows.
    pub fn rows(self, n: usize) -> usize {
        match self {
            GroupSize::FullColumn => n,
            GroupSize::Rows(g) => g,
        }
    }

    /// Number of groups per column of `n` rows.
    pub fn groups(self, n: usize) -> usize {
        match self {
            GroupSize::FullColumn => 1,
            GroupSize::Rows(g) => n.div_ceil(g),
        }
    }

    /// On-disk encoding: 0 means full column.
    pub fn to_raw(self) -> u64 {
        match self {
            GroupSize::FullColumn => 0,
            GroupSize::Rows(g) => g as u64,
        }
    }

    pub fn from_raw(raw: u64) -> Self {
        match raw {
            0 => GroupSize::FullColumn,
            g => GroupSize::Rows(g as usize),
        }
    }
}

impl std::fmt::Display for GroupSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupSize::FullColumn => f.write_str("full-column"),
            GroupSize::Rows(g) => write!(f, "{g}"),
        }
    }
}

/// How zero-points are stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ZeroMode {
    /// 32-bit real zero-point.
    Real32,
    /// Zero-point rounded to a `b`-bit integer code.
    Quantized,
}

impl ZeroMode {
    pub fn to_raw(self) -> u8 {
        match self {
            ZeroMode::Real32 => 0,
            ZeroMode::Quantized => 1,
        }
    }

    pub fn from_raw(raw: u8) -> Option<Self> {
        match raw {
            0 => Some(ZeroMode::Real32),
            1 => Some(ZeroMode::Quantized),
            _ => None,
        }
    }

    /// Storage bits per zero-point.
    pub fn zero_bits(self, bits: Bits) -> u32 {
        match self {
            ZeroMode::Real32 => 32,
            ZeroMode::Quantized => bits.get(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuantConfig {
    pub bits: Bits,
    pub group_size: GroupSize,
    pub zero_mode: ZeroMode,
}

impl QuantConfig {
    pub fn new(bits: u32, group_size: GroupSize, zero_mode: ZeroMode) -> Result<Self> {
        let bits = Bits::new(bits)?;
        if group_size == GroupSize::Rows(0) {
            return Err(Error::ZeroGroupSize);
        }
        Ok(Self {
            bits,
            group_size,
            zero_mode,
        })
    }

    pub fn full_column(bits: u32, zero_mode: ZeroMode) -> Result<Self> {
        Self::new(bits, GroupSize::FullColumn, zero_mode)
    }

    /// Checks that the configuration applies to a column of `rows` rows.
    pub fn check_rows(&self, rows: usize) -> Result<()> {
        match self.group_size {
            GroupSize::Rows(0) => Err(Error::ZeroGroupSize),
            GroupSize::Rows(g) if rows % g != 0 => Err(Error::RaggedGroups {
                rows,
                group_size: g,
            }),
            _ => Ok(()),
        }
    }
}

/// Scale and zero-point shared by one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupParams {
    pub scale: f32,
    pub zero: f32,
}

impl GroupParams {
    #[inline]
    pub fn dequantize(&self, code: u32) -> f32 {
        self.scale * (code as f32 - self.zero)
    }
}

/// Quantizes one group of values.
pub fn quantize_group(x: &[f32], bits: Bits, zero_mode: ZeroMode) -> Result<(Vec<u8>, GroupParams)> {
    if x.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for (index, &value) in x.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        lo = lo.min(value);
        hi = hi.max(value);
    }
    let max_code = bits.max_code() as f32;

    if lo == hi {
        let params = constant_params(lo, zero_mode);
        let code = if zero_mode == ZeroMode::Quantized && lo != 0.0 {
            // s * (code - z) == c needs a non-zero code or zero-point here
            if lo > 0.0 { 1 } else { 0 }
        } else {
            0
        };
        return Ok((vec![code; x.len()], params));
    }

    let scale = (hi - lo) / max_code;
    let zero = match zero_mode {
        ZeroMode::Real32 => -lo / scale,
        ZeroMode::Quantized => (-lo / scale).round().clamp(0.0, max_code),
    };
    let codes = x
        .iter()
        .map(|&v| (v / scale + zero).round().clamp(0.0, max_code) as u8)
        .collect();
    Ok((codes, GroupParams { scale, zero }))
}

fn constant_params(c: f32, zero_mode: ZeroMode) -> GroupParams {
    match zero_mode {
        ZeroMode::Real32 => GroupParams {
            scale: 1.0,
            zero: -c,
        },
        ZeroMode::Quantized if c == 0.0 => GroupParams {
            scale: 1.0,
            zero: 0.0,
        },
        ZeroMode::Quantized if c > 0.0 => GroupParams {
            scale: c,
            zero: 0.0,
        },
        ZeroMode::Quantized => GroupParams {
            scale: -c,
            zero: 1.0,
        },
    }
}

/// Reconstructs `s * (code - z)` for every code.
pub fn dequantize(codes: &[u8], params: GroupParams) -> Vec<f32> {
    codes.iter().map(|&c| params.dequantize(c as u32)).collect()
}

/// Integer codes of an `n x m` matrix with per-(group, column) parameters.
///
/// Codes are row-major (`codes[i * m + j]`); parameters are group-major
/// (`params[group * m + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    codes: Vec<u8>,
    params: Vec<GroupParams>,
    rows: usize,
    cols: usize,
    config: QuantConfig,
}

impl CodeMatrix {
    /// Assembles a code matrix from externally produced codes and parameters.
    pub fn from_parts(
        codes: Vec<u8>,
        params: Vec<GroupParams>,
        rows: usize,
        cols: usize,
        config: QuantConfig,
    ) -> Result<Self> {
        config.check_rows(rows)?;
        if codes.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                actual: codes.len(),
            });
        }
        let groups = config.group_size.groups(rows);
        if params.len() != groups * cols {
            return Err(Error::ShapeMismatch {
                expected: groups * cols,
                actual: params.len(),
            });
        }
        let max_code = config.bits.max_code();
        if let Some((index, &code)) = codes
            .iter()
            .enumerate()
            .find(|(_, &c)| c as u32 > max_code)
        {
            return Err(Error::CodeOutOfRange {
                index,
                code: code as u32,
                bits: config.bits.get(),
            });
        }
        for p in &params {
            if !(p.scale.is_finite() && p.scale >= 0.0) {
                return Err(Error::InvalidScale(p.scale));
            }
            if !p.zero.is_finite() {
                return Err(Error::InvalidZero {
                    zero: p.zero,
                    bits: config.bits.get(),
                });
            }
            if config.zero_mode == ZeroMode::Quantized
                && (p.zero.fract() != 0.0 || p.zero < 0.0 || p.zero > max_code as f32)
            {
                return Err(Error::InvalidZero {
                    zero: p.zero,
                    bits: config.bits.get(),
                });
            }
        }
        Ok(Self {
            codes,
            params,
            rows,
            cols,
            config,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn config(&self) -> QuantConfig {
        self.config
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn params(&self) -> &[GroupParams] {
        &self.params
    }

    pub fn groups_per_column(&self) -> usize {
        self.config.group_size.groups(self.rows)
    }

    #[inline]
    pub fn code(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.cols + col]
    }

    #[inline]
    pub fn param(&self, row: usize, col: usize) -> GroupParams {
        let g = self.config.group_size.rows(self.rows);
        self.params[(row / g) * self.cols + col]
    }

    /// Row-major dequantized matrix.
    pub fn dequantize(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.param(i, j).dequantize(self.code(i, j) as u32));
            }
        }
        out
    }
}

/// Quantizes a row-major `rows x cols` matrix column by column.
pub fn quantize_matrix(w: &[f32], rows: usize, cols: usize, config: QuantConfig) -> Result<CodeMatrix> {
    if w.len() != rows * cols {
        return Err(Error::ShapeMismatch {
            expected: rows * cols,
            actual: w.len(),
        });
    }
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyGroup);
    }
    config.check_rows(rows)?;
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }

    let g = config.group_size.rows(rows);
    let groups = config.group_size.groups(rows);
    let mut codes = vec![0u8; rows * cols];
    let mut params = vec![GroupParams { scale: 1.0, zero: 0.0 }; groups * cols];
    let mut column = Vec::with_capacity(g);
    for j in 0..cols {
        for group in 0..groups {
            let r0 = group * g;
            column.clear();
            column.extend((r0..r0 + g).map(|i| w[i * cols + j]));
            let (group_codes, p) = quantize_group(&column, config.bits, config.zero_mode)?;
            for (k, c) in group_codes.into_iter().enumerate() {
                codes[(r0 + k) * cols + j] = c;
            }
            params[group * cols + j] = p;
        }
    }
    Ok(CodeMatrix {
        codes,
        params,
        rows,
        cols,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn real(bits: u32) -> QuantConfig {
        QuantConfig::new(bits, GroupSize::FullColumn, ZeroMode::Real32).unwrap()
    }

    #[test]
    fn unit_step_identity() {
        let x: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let (codes, p) = quantize_group(&x, Bits::FOUR, ZeroMode::Real32).unwrap();
        assert_eq!(p, GroupParams { scale: 1.0, zero: 0.0 });
        assert_eq!(codes, (0..16).collect::<Vec<u8>>());
        assert_eq!(dequantize(&codes, p), x);
    }

    #[test]
    fn constant_group() {
        for c in [-3.25f32, 0.0, 7.5] {
            let x = vec![c; 9];
            let (codes, p) = quantize_group(&x, Bits::FOUR, ZeroMode::Real32).unwrap();
            assert_eq!(p, GroupParams { scale: 1.0, zero: -c });
            assert!(codes.iter().all(|&q| q == 0));
            assert_eq!(dequantize(&codes, p), x);
        }
    }

    #[test]
    fn constant_group_quantized_zero_is_exact() {
        for c in [-3.25f32, 0.0, 7.5] {
            let x = vec![c; 4];
            let (codes, p) = quantize_group(&x, Bits::THREE, ZeroMode::Quantized).unwrap();
            assert!(p.zero.fract() == 0.0 && (0.0..8.0).contains(&p.zero));
            assert_eq!(dequantize(&codes, p), x);
        }
    }

    #[test]
    fn two_bit_symmetric() {
        let (codes, p) = quantize_group(&[-1.0, 1.0], Bits::TWO, ZeroMode::Real32).unwrap();
        assert_eq!(p.scale, 2.0f32 / 3.0);
        assert_eq!(p.zero, 1.5);
        assert_eq!(codes, vec![0, 3]);
        assert_eq!(dequantize(&codes, p), vec![-1.0, 1.0]);
    }

    #[test]
    fn dequantize_examples() {
        let p = GroupParams { scale: 2.0 / 3.0, zero: 1.5 };
        assert_eq!(dequantize(&[0, 3], p), vec![-1.0, 1.0]);
        let p = GroupParams { scale: 1.0, zero: 2.5 };
        assert_eq!(dequantize(&[0, 0], p), vec![-2.5, -2.5]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            quantize_group(&[], Bits::FOUR, ZeroMode::Real32),
            Err(Error::EmptyGroup)
        ));
        assert!(matches!(
            quantize_group(&[1.0, f32::NAN], Bits::FOUR, ZeroMode::Real32),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(matches!(Bits::new(5), Err(Error::UnsupportedBits(5))));
        assert!(matches!(
            QuantConfig::new(4, GroupSize::Rows(0), ZeroMode::Real32),
            Err(Error::ZeroGroupSize)
        ));
    }

    #[test]
    fn ragged_groups_rejected() {
        let cfg = QuantConfig::new(4, GroupSize::Rows(16), ZeroMode::Real32).unwrap();
        let w = vec![0.0; 24 * 2];
        assert!(matches!(
            quantize_matrix(&w, 24, 2, cfg),
            Err(Error::RaggedGroups { rows: 24, group_size: 16 })
        ));
    }

    #[test]
    fn zero_matrix() {
        for bits in [2, 3, 4] {
            let cfg = QuantConfig::new(bits, GroupSize::Rows(8), ZeroMode::Quantized).unwrap();
            let cm = quantize_matrix(&vec![0.0; 32 * 5], 32, 5, cfg).unwrap();
            assert!(cm.codes().iter().all(|&c| c == 0));
            assert!(cm.params().iter().all(|p| p.scale == 1.0 && p.zero == 0.0));
            assert!(cm.dequantize().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_column_full() {
        let w: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let cm = quantize_matrix(&w, 16, 1, real(4)).unwrap();
        assert_eq!(cm.params(), &[GroupParams { scale: 1.0, zero: 0.0 }]);
        assert_eq!(cm.codes(), (0..16).collect::<Vec<u8>>().as_slice());
    }

    #[test]
    fn from_parts_validates() {
        let cfg = QuantConfig::new(2, GroupSize::FullColumn, ZeroMode::Quantized).unwrap();
        let p = GroupParams { scale: 1.0, zero: 1.0 };
        assert!(CodeMatrix::from_parts(vec![0, 3], vec![p], 2, 1, cfg).is_ok());
        assert!(matches!(
            CodeMatrix::from_parts(vec![0, 4], vec![p], 2, 1, cfg),
            Err(Error::CodeOutOfRange { index: 1, code: 4, bits: 2 })
        ));
        let bad_zero = GroupParams { scale: 1.0, zero: 0.5 };
        assert!(matches!(
            CodeMatrix::from_parts(vec![0, 1], vec![bad_zero], 2, 1, cfg),
            Err(Error::InvalidZero { .. })
        ));
        assert!(matches!(
            CodeMatrix::from_parts(vec![0, 1], vec![], 2, 1, cfg),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn idempotent_on_dequantized(
            x in prop::collection::vec(-100.0f32..100.0, 2..64),
            bits in 2u32..=4,
        ) {
            let bits = Bits::new(bits).unwrap();
            let (codes, p) = quantize_group(&x, bits, ZeroMode::Real32).unwrap();
            let y = dequantize(&codes, p);
            let (again, _) = quantize_group(&y, bits, ZeroMode::Real32).unwrap();
            prop_assert_eq!(codes, again);
        }

        #[test]
        fn quantized_zero_in_range(
            x in prop::collection::vec(-10.0f32..10.0, 1..40),
            bits in 2u32..=4,
        ) {
            let bits = Bits::new(bits).unwrap();
            let (codes, p) = quantize_group(&x, bits, ZeroMode::Quantized).unwrap();
            prop_assert!(p.zero.fract() == 0.0);
            prop_assert!(p.zero >= 0.0 && p.zero <= bits.max_code() as f32);
            prop_assert!(codes.iter().all(|&c| c as u32 <= bits.max_code()));
        }
    }
}
