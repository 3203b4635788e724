//! `QIGW` weight files.
//!
//! ```text
//! offset size field
//!      0    4 magic "QIGW"
//!      4    2 version (u16)
//!      6    1 bits
//!      7    1 zero mode (0 = real32, 1 = quantized)
//!      8    8 n (rows)
//!     16    8 m (columns)
//!     24    8 group size (0 = full column)
//!     32    1 layout (0 = row-sequential, 1 = z-curve)
//!     33    4 m_b
//!     37    4 t_b
//!     41    2 m_u
//!     43    2 t_u
//!     45    8 payload length in bytes
//!     53    4 CRC-32 of the payload
//!     57      zero padding up to byte 64
//! ```
//!
//! The payload follows at byte 64: scales (f32), zero-points (f32 or packed
//! `b`-bit codes), then the packed weight words. Every section starts on a
//! 64-byte boundary; gaps are zero. All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::perfmodel::TilePlan;
use crate::quant::{Bits, GroupSize, QuantConfig, ZeroMode};

use super::layout::{Layout, PackedMatrix, Zeros};

pub const MAGIC: [u8; 4] = *b"QIGW";
pub const FORMAT_VERSION: u16 = 1;
/// Header size including its padding.
pub const HEADER_BYTES: usize = 64;
const FIELDS_BYTES: usize = 57;
const ALIGN: usize = 64;

/// Decoded header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightFileHeader {
    pub version: u16,
    pub bits: u8,
    pub zero_mode: u8,
    pub rows: u64,
    pub cols: u64,
    pub group_size: u64,
    pub layout: u8,
    pub m_b: u32,
    pub t_b: u32,
    pub m_u: u16,
    pub t_u: u16,
    pub payload_len: u64,
    pub crc32: u32,
}

impl WeightFileHeader {
    fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut out = [0u8; HEADER_BYTES];
        let mut at = 0;
        let mut put = |bytes: &[u8]| {
            out[at..at + bytes.len()].copy_from_slice(bytes);
            at += bytes.len();
        };
        put(&MAGIC);
        put(&self.version.to_le_bytes());
        put(&[self.bits, self.zero_mode]);
        put(&self.rows.to_le_bytes());
        put(&self.cols.to_le_bytes());
        put(&self.group_size.to_le_bytes());
        put(&[self.layout]);
        put(&self.m_b.to_le_bytes());
        put(&self.t_b.to_le_bytes());
        put(&self.m_u.to_le_bytes());
        put(&self.t_u.to_le_bytes());
        put(&self.payload_len.to_le_bytes());
        put(&self.crc32.to_le_bytes());
        debug_assert_eq!(at, FIELDS_BYTES);
        out
    }

    /// Parses the header at the start of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            let mut magic = [0u8; 4];
            magic.copy_from_slice(&bytes[..4]);
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Truncated {
                needed: HEADER_BYTES as u64,
                found: bytes.len() as u64,
            });
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(Self {
            version,
            bits: bytes[6],
            zero_mode: bytes[7],
            rows: u64_at(8),
            cols: u64_at(16),
            group_size: u64_at(24),
            layout: bytes[32],
            m_b: u32_at(33),
            t_b: u32_at(37),
            m_u: u16_at(41),
            t_u: u16_at(43),
            payload_len: u64_at(45),
            crc32: u32_at(53),
        })
    }

    pub fn config(&self) -> Result<QuantConfig> {
        let zero_mode = ZeroMode::from_raw(self.zero_mode)
            .ok_or_else(|| Error::Malformed(format!("unknown zero mode {}", self.zero_mode)))?;
        QuantConfig::new(self.bits as u32, GroupSize::from_raw(self.group_size), zero_mode)
    }

    pub fn plan(&self) -> TilePlan {
        TilePlan {
            m_u: self.m_u as usize,
            t_u: self.t_u as usize,
            m_b: self.m_b as usize,
            t_b: self.t_b as usize,
        }
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::from_raw(self.layout)
            .ok_or_else(|| Error::Malformed(format!("unknown layout {}", self.layout)))
    }
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Byte ranges of the three sections, relative to the payload start.
fn sections(rows: usize, cols: usize, config: &QuantConfig) -> [(usize, usize); 3] {
    let bits = config.bits;
    let groups_total = config.group_size.groups(rows) * cols;
    let scales = groups_total * 4;
    let zeros = match config.zero_mode {
        ZeroMode::Real32 => groups_total * 4,
        ZeroMode::Quantized => groups_total.div_ceil(bits.unit_rows()) * bits.unit_words() * 4,
    };
    let words = rows / bits.unit_rows() * bits.unit_words() * cols * 4;
    let zeros_at = align(scales);
    let words_at = align(zeros_at + zeros);
    [(0, scales), (zeros_at, zeros), (words_at, words)]
}

fn u32s_to_bytes(out: &mut [u8], values: impl Iterator<Item = u32>) {
    for (chunk, v) in out.chunks_exact_mut(4).zip(values) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
}

fn bytes_to_u32s(bytes: &[u8]) -> impl Iterator<Item = u32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
}

/// Serializes a packed matrix.
pub fn encode_weight_file(pm: &PackedMatrix) -> Vec<u8> {
    let config = pm.config();
    let [s, z, w] = sections(pm.rows(), pm.cols(), &config);
    let mut payload = vec![0u8; w.0 + w.1];
    u32s_to_bytes(&mut payload[s.0..s.0 + s.1], pm.scales().iter().map(|v| v.to_bits()));
    match pm.zeros() {
        Zeros::Real(zs) => u32s_to_bytes(&mut payload[z.0..z.0 + z.1], zs.iter().map(|v| v.to_bits())),
        Zeros::Quantized(words) => u32s_to_bytes(&mut payload[z.0..z.0 + z.1], words.iter().copied()),
    }
    u32s_to_bytes(&mut payload[w.0..w.0 + w.1], pm.words().iter().copied());

    let plan = pm.plan();
    let header = WeightFileHeader {
        version: FORMAT_VERSION,
        bits: config.bits.get() as u8,
        zero_mode: config.zero_mode.to_raw(),
        rows: pm.rows() as u64,
        cols: pm.cols() as u64,
        group_size: config.group_size.to_raw(),
        layout: pm.layout().to_raw(),
        m_b: plan.m_b as u32,
        t_b: plan.t_b as u32,
        m_u: plan.m_u as u16,
        t_u: plan.t_u as u16,
        payload_len: payload.len() as u64,
        crc32: crc32fast::hash(&payload),
    };
    let mut out = Vec::with_capacity(HEADER_BYTES + payload.len());
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(&payload);
    out
}

/// Parses a weight file image, verifying the checksum.
pub fn decode_weight_file(bytes: &[u8]) -> Result<PackedMatrix> {
    let header = WeightFileHeader::decode(bytes)?;
    let config = header.config()?;
    let layout = header.layout()?;
    let (rows, cols) = (header.rows as usize, header.cols as usize);
    let bits = Bits::new(header.bits as u32)?;
    if rows % bits.unit_rows() != 0 {
        return Err(Error::RowAlignment {
            rows,
            bits: bits.get(),
            unit: bits.unit_rows(),
        });
    }
    config.check_rows(rows)?;
    let [s, z, w] = sections(rows, cols, &config);
    let expected = (w.0 + w.1) as u64;
    if header.payload_len != expected {
        return Err(Error::Malformed(format!(
            "payload length {} does not match the {expected} bytes implied by the header",
            header.payload_len
        )));
    }
    let found = (bytes.len() - HEADER_BYTES) as u64;
    if found < expected {
        return Err(Error::Truncated {
            needed: HEADER_BYTES as u64 + expected,
            found: bytes.len() as u64,
        });
    }
    if found > expected {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the payload",
            found - expected
        )));
    }
    let payload = &bytes[HEADER_BYTES..];
    let actual = crc32fast::hash(payload);
    if actual != header.crc32 {
        return Err(Error::ChecksumMismatch {
            expected: header.crc32,
            actual,
        });
    }

    let scales = bytes_to_u32s(&payload[s.0..s.0 + s.1]).map(f32::from_bits).collect();
    let zeros = match config.zero_mode {
        ZeroMode::Real32 => Zeros::Real(bytes_to_u32s(&payload[z.0..z.0 + z.1]).map(f32::from_bits).collect()),
        ZeroMode::Quantized => Zeros::Quantized(bytes_to_u32s(&payload[z.0..z.0 + z.1]).collect()),
    };
    let words = bytes_to_u32s(&payload[w.0..w.0 + w.1]).collect();
    PackedMatrix::from_parts(words, rows, cols, config, scales, zeros, header.plan(), layout)
}

pub fn write_weight_file(pm: &PackedMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weight_file(pm))?;
    Ok(())
}

pub fn read_weight_file(path: impl AsRef<Path>) -> Result<PackedMatrix> {
    decode_weight_file(&fs::read(path)?)
}

/// Reads only the header.
pub fn read_header(path: impl AsRef<Path>) -> Result<WeightFileHeader> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(HEADER_BYTES);
    fs::File::open(path)?
        .take(HEADER_BYTES as u64)
        .read_to_end(&mut buf)?;
    WeightFileHeader::decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::lay_out_blocks;
    use crate::quant::quantize_matrix;

    fn sample(bits: u32, group: GroupSize, zero_mode: ZeroMode) -> PackedMatrix {
        let (rows, cols) = (64, 24);
        let w: Vec<f32> = (0..rows * cols)
            .map(|i| ((i * 37 % 101) as f32 - 50.0) / 7.0)
            .collect();
        let cfg = QuantConfig::new(bits, group, zero_mode).unwrap();
        let cm = quantize_matrix(&w, rows, cols, cfg).unwrap();
        let plan = TilePlan { m_u: 2, t_u: 2, m_b: 32, t_b: 10 };
        lay_out_blocks(&cm, plan, Layout::ZCurve).unwrap()
    }

    #[test]
    fn round_trip() {
        for bits in [2, 3, 4] {
            for group in [GroupSize::FullColumn, GroupSize::Rows(32)] {
                for zm in [ZeroMode::Real32, ZeroMode::Quantized] {
                    let pm = sample(bits, group, zm);
                    let bytes = encode_weight_file(&pm);
                    assert_eq!(bytes.len() % 4, 0);
                    assert_eq!(decode_weight_file(&bytes).unwrap(), pm);
                }
            }
        }
    }

    #[test]
    fn header_layout() {
        let pm = sample(4, GroupSize::Rows(32), ZeroMode::Real32);
        let bytes = encode_weight_file(&pm);
        assert_eq!(&bytes[..4], b"QIGW");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 4);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 64);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 32);
        assert_eq!(bytes[32], 1);
        assert_eq!(u32::from_le_bytes(bytes[33..37].try_into().unwrap()), 32);
        assert!(bytes[FIELDS_BYTES..HEADER_BYTES].iter().all(|&b| b == 0));
    }

    #[test]
    fn distinct_errors() {
        let pm = sample(3, GroupSize::FullColumn, ZeroMode::Quantized);
        let good = encode_weight_file(&pm);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_weight_file(&bad), Err(Error::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_weight_file(&bad),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));

        assert!(matches!(
            decode_weight_file(&good[..good.len() - 5]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(decode_weight_file(&good[..20]), Err(Error::Truncated { .. })));

        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x10;
        assert!(matches!(decode_weight_file(&bad), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn size_matches_formula_when_aligned() {
        // 128 x 256 full column, quantized zeros: every section is a
        // multiple of 64 bytes so the file carries no alignment padding
        let (rows, cols) = (128, 256);
        let w: Vec<f32> = (0..rows * cols).map(|i| (i % 17) as f32).collect();
        let cfg = QuantConfig::full_column(4, ZeroMode::Quantized).unwrap();
        let cm = quantize_matrix(&w, rows, cols, cfg).unwrap();
        let pm = lay_out_blocks(&cm, TilePlan { m_u: 1, t_u: 1, m_b: 64, t_b: 64 }, Layout::ZCurve).unwrap();
        let bytes = encode_weight_file(&pm);
        let formula = (4 * rows * cols + 32 * cols + 4 * cols) as u64;
        assert_eq!(pm.payload_bits(), formula);
        assert_eq!(bytes.len() as u64 * 8, 8 * HEADER_BYTES as u64 + formula);
    }

    #[test]
    fn files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.qigw");
        let pm = sample(2, GroupSize::Rows(16), ZeroMode::Quantized);
        write_weight_file(&pm, &path).unwrap();
        assert_eq!(read_weight_file(&path).unwrap(), pm);
        let h = read_header(&path).unwrap();
        assert_eq!(h.config().unwrap(), pm.config());
        assert_eq!(h.plan(), pm.plan());
    }
}
