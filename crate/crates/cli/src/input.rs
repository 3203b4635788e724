//! Input matrix formats.
//!
//! Raw floats: `n: u64`, `m: u64`, then `n * m` `f32` values, row-major
//! (row `i` holds the weights multiplying input element `i`).
//!
//! Codes: `n: u64`, `m: u64`, `bits: u32`, `group size: u64` (0 = full
//! column), `zero mode: u32` (0 = real32, 1 = quantized), then `n * m` code
//! bytes row-major, then `groups * m` `f32` scales and `groups * m` `f32`
//! zero-points, group-major. All little-endian.

use std::fmt;

use qigen_core::quant::{Bits, CodeMatrix, GroupParams, GroupSize, QuantConfig, ZeroMode};

/// Input that does not follow the documented layout.
#[derive(Debug)]
pub struct FormatError(pub String);

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for FormatError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    FormatError(msg.into()).into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> anyhow::Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(bad(format!(
                "input ends inside {what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> anyhow::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self, what: &str) -> anyhow::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, count: usize, what: &str) -> anyhow::Result<Vec<f32>> {
        let len = count.checked_mul(4).ok_or_else(|| bad(format!("{what} too large")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn finish(&self) -> anyhow::Result<()> {
        if self.pos != self.bytes.len() {
            return Err(bad(format!(
                "{} unexpected trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn dims(r: &mut Reader) -> anyhow::Result<(usize, usize, usize)> {
    let n = r.u64("row count")?;
    let m = r.u64("column count")?;
    let (n, m) = (usize::try_from(n)?, usize::try_from(m)?);
    let count = n
        .checked_mul(m)
        .ok_or_else(|| bad(format!("{n} x {m} matrix is too large")))?;
    Ok((n, m, count))
}

/// Reads the raw float format; returns `(weights, n, m)`.
pub fn read_raw_matrix(bytes: &[u8]) -> anyhow::Result<(Vec<f32>, usize, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let (n, m, count) = dims(&mut r)?;
    let w = r.f32s(count, "matrix values")?;
    r.finish()?;
    Ok((w, n, m))
}

/// Reads the codes format.
pub fn read_code_matrix(bytes: &[u8]) -> anyhow::Result<CodeMatrix> {
    let mut r = Reader { bytes, pos: 0 };
    let (n, m, count) = dims(&mut r)?;
    let bits = Bits::new(r.u32("bit width")?)?;
    let group_size = GroupSize::from_raw(r.u64("group size")?);
    let zero_mode = ZeroMode::from_raw(r.u32("zero mode")? as u8)
        .ok_or_else(|| bad("zero mode must be 0 (real32) or 1 (quantized)"))?;
    let config = QuantConfig::new(bits.get(), group_size, zero_mode)?;
    config.check_rows(n)?;
    let codes = r.take(count, "codes")?.to_vec();
    let groups = group_size.groups(n) * m;
    let scales = r.f32s(groups, "scales")?;
    let zeros = r.f32s(groups, "zero-points")?;
    r.finish()?;
    let params = scales
        .into_iter()
        .zip(zeros)
        .map(|(scale, zero)| GroupParams { scale, zero })
        .collect();
    Ok(CodeMatrix::from_parts(codes, params, n, m, config)?)
}
